#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace algmech {

enum class Op : std::uint8_t { Constant, Variable, Add, Sub, Mul, Div, Neg, Pow, Sin, Cos, Tan, Exp, Log, Sqrt };

/// Immutable expression tree with shared subtrees. Arithmetic operators fold constants
/// and drop neutral elements; Expr::make builds a node verbatim.
class Expr {
 public:
  struct Node;

  Expr();
  Expr(double value);  // NOLINT(google-explicit-constructor): literals read naturally in formulas

  static Expr variable(std::string name);
  static Expr make(Op op, Expr a, Expr b = Expr(), int exponent = 0);

  Op op() const;
  double value() const;
  int exponent() const;
  const std::string& name() const;
  const Expr& lhs() const;
  const Expr& rhs() const;

  bool is_constant() const { return op() == Op::Constant; }
  bool is_constant(double v) const { return is_constant() && value() == v; }
  const Node* id() const { return node_.get(); }

 private:
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

struct Expr::Node {
  Op op = Op::Constant;
  double value = 0.0;
  int exponent = 0;
  std::string name;
  Expr a;
  Expr b;
};

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr& operator+=(Expr& a, const Expr& b);
Expr& operator-=(Expr& a, const Expr& b);

Expr pow(const Expr& a, int k);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr tan(const Expr& a);
Expr exp(const Expr& a);
Expr log(const Expr& a);
Expr sqrt(const Expr& a);
Expr apply(Op unary, const Expr& a);

Expr differentiate(const Expr& e, std::string_view var);
Expr substitute(const Expr& e, const std::map<std::string, Expr>& replacements);

/// Fully parenthesized text that parses back to the same tree.
std::string to_string(const Expr& e);
bool structurally_equal(const Expr& a, const Expr& b);
std::set<std::string> free_variables(const Expr& e);
std::size_t node_count(const Expr& e);

/// Direct tree-walking evaluation, used for one-off values and cross-checks.
double evaluate(const Expr& e, const std::map<std::string, double>& values);

/// Coordinate naming: block "x", index 0 -> "x1".
std::string coordinate_name(std::string_view block, std::size_t index);
std::vector<Expr> coordinates(std::string_view block, std::size_t count);

Expr dot(const std::vector<Expr>& a, const std::vector<Expr>& b);

}  // namespace algmech
