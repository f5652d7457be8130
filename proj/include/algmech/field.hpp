#pragma once

#include "algmech/expr.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace algmech {

/// Ordered coordinate names of a flat input vector.
class VariableLayout {
 public:
  VariableLayout() = default;
  /// Blocks of coordinates named block1..blockN, in order.
  VariableLayout(std::initializer_list<std::pair<std::string, std::size_t>> blocks);

  VariableLayout& add_block(const std::string& block, std::size_t count);
  VariableLayout& add(const std::string& name);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::size_t offset(const std::string& block) const;
  std::size_t block_size(const std::string& block) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> blocks_;
};

/// Values and partial derivatives of a list of outputs at one point.
struct Derivatives {
  Eigen::VectorXd value;
  Eigen::MatrixXd jacobian;               // outputs x inputs; filled for order >= 1
  std::vector<Eigen::MatrixXd> hessian;   // one inputs x inputs matrix per output; filled for order 2
  bool exact = true;                      // false for finite-difference derivatives
  double tolerance = 0.0;                 // declared accuracy when !exact
};

/// A list of expressions compiled to a flat instruction tape with shared subexpressions
/// evaluated once. Evaluation is forward mode with dense gradient and Hessian slots, so
/// derivatives are exact to roundoff and Hessians are exactly symmetric.
class CompiledExprs {
 public:
  CompiledExprs() = default;
  CompiledExprs(const std::vector<Expr>& outputs, VariableLayout layout);

  std::size_t num_outputs() const { return outputs_.size(); }
  std::size_t num_inputs() const { return layout_.size(); }
  const VariableLayout& layout() const { return layout_; }

  Derivatives evaluate(std::span<const double> point, int order) const;
  Eigen::VectorXd values(std::span<const double> point) const;

  struct Instr {
    Op op;
    int a = -1;
    int b = -1;
    int exponent = 0;
    double value = 0.0;
    int var = -1;
    bool depends = false;
    Expr node;
  };

 private:
  VariableLayout layout_;
  std::vector<Instr> tape_;
  std::vector<int> outputs_;
};

/// Output shape of a SmoothField; entries are stored row-major (last index fastest).
struct Shape {
  std::vector<std::size_t> dims;  // {} scalar, {k} vector, {r,c} matrix, {r,c,d} array3
  std::size_t count() const;
  static Shape scalar() { return {}; }
  static Shape vector(std::size_t k) { return {{k}}; }
  static Shape matrix(std::size_t r, std::size_t c) { return {{r, c}}; }
  static Shape array3(std::size_t r, std::size_t c, std::size_t d) { return {{r, c, d}}; }
};

/// Scalar, vector, matrix or rank-3 valued smooth function of named inputs. Backed either
/// by expressions (exact derivatives) or by an opaque callable (central differences).
class SmoothField {
 public:
  using Callable = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  SmoothField() = default;
  SmoothField(Shape shape, const std::vector<Expr>& entries, VariableLayout layout);
  SmoothField(Shape shape, Callable fn, VariableLayout layout);

  const Shape& shape() const { return shape_; }
  const VariableLayout& layout() const { return layout_; }
  bool expression_backed() const { return !callable_; }
  const std::vector<Expr>& entries() const { return entries_; }

  Derivatives evaluate(std::span<const double> point, int order) const;

 private:
  Shape shape_;
  VariableLayout layout_;
  std::vector<Expr> entries_;
  CompiledExprs compiled_;
  Callable callable_;
};

/// Checks that every free variable of e is in the layout; throws naming the first stray one.
void require_variables(const Expr& e, const VariableLayout& layout, const std::string& what);

}  // namespace algmech
