#pragma once

#include "algmech/expr.hpp"
#include "algmech/field.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace algmech {

/// Structure functions C^C_{AB}(x). Only A < B entries are stored, so antisymmetry holds by construction.
class StructureTable {
 public:
  explicit StructureTable(std::size_t n = 0);

  std::size_t rank() const { return n_; }
  /// Sets C^C_{AB} (0-based) and implicitly C^C_{BA} = -value. A == B requires a zero value.
  void set(std::size_t c, std::size_t a, std::size_t b, const Expr& value);
  Expr get(std::size_t c, std::size_t a, std::size_t b) const;
  /// Stored entries, pair-major: ((A,B) with A<B) * n + C.
  const std::vector<Expr>& stored() const { return upper_; }
  std::size_t pair_index(std::size_t a, std::size_t b) const;

 private:
  std::size_t n_;
  std::vector<Expr> upper_;
};

/// Dense C^C_{AB} at one base point, with optional derivatives dC/dx^i.
struct StructureValues {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> c;   // (C * n + A) * n + B
  std::vector<double> dc;  // ((C * n + A) * n + B) * m + i, filled when requested
  double operator()(std::size_t C, std::size_t A, std::size_t B) const { return c[(C * n + A) * n + B]; }
  double d(std::size_t C, std::size_t A, std::size_t B, std::size_t i) const { return dc[((C * n + A) * n + B) * m + i]; }
};

/// Anchor and structure functions at one base point.
struct ChartPoint {
  Eigen::MatrixXd rho;                // m x n, rho(i, A)
  std::vector<Eigen::MatrixXd> drho;  // per base coordinate j: d rho / d x^j (m x n); filled for order >= 1
  StructureValues C;
};

/// A Lie algebroid in one local chart: base coordinates x1..xm, fiber coordinates y1..yn,
/// anchor rho^i_A(x) and structure functions C^C_{AB}(x) given as expressions in x.
class AlgebroidChart {
 public:
  AlgebroidChart() = default;
  /// anchor is m*n expressions, row-major in (i, A).
  AlgebroidChart(std::string name, std::size_t m, std::size_t n, std::vector<Expr> anchor, StructureTable structure);

  const std::string& name() const { return name_; }
  std::size_t base_dim() const { return m_; }
  std::size_t fiber_rank() const { return n_; }
  const Expr& anchor(std::size_t i, std::size_t a) const { return anchor_[i * n_ + a]; }
  Expr structure(std::size_t c, std::size_t a, std::size_t b) const { return structure_.get(c, a, b); }
  const StructureTable& structure_table() const { return structure_; }

  /// Anchor and structure at x; order 1 adds their first partials in x.
  ChartPoint at(const Eigen::VectorXd& x, int order = 0) const;
  Eigen::MatrixXd anchor_at(const Eigen::VectorXd& x) const;

  /// Anchor and structure as fields of the base coordinates.
  SmoothField anchor_field() const;
  SmoothField structure_field() const;

 private:
  std::string name_;
  std::size_t m_ = 0;
  std::size_t n_ = 0;
  std::vector<Expr> anchor_;
  StructureTable structure_;
  CompiledExprs compiled_;
};

struct AxiomResidual {
  double max = 0.0;
  std::size_t sample = 0;
  std::string location;  // indices of the worst entry
};

struct ValidationReport {
  AxiomResidual antisymmetry;
  AxiomResidual anchor_bracket;  // rho_A(rho_B) - rho_B(rho_A) - rho_C C^C_{AB}
  AxiomResidual jacobi;          // cyclic sum of rho_A(C^D_{BC}) + C^D_{AF} C^F_{BC}
  std::size_t samples = 0;
  double tol = 0.0;
  bool pass = false;
  std::string domain_note;

  double max_residual() const;
};

/// Uniform samples in [lo, hi]^m from a seeded generator.
std::vector<Eigen::VectorXd> sample_box(std::size_t m, std::size_t count, double lo, double hi, std::uint64_t seed);

ValidationReport validate_chart(const AlgebroidChart& chart, const std::vector<Eigen::VectorXd>& samples, double tol);

/// Checks a raw constant structure array C(c, a, b) = c[(c * n + a) * n + b] before it is folded
/// into a chart, so entries that break antisymmetry are still reported by both identities.
ValidationReport validate_structure_array(std::size_t n, const std::vector<double>& c, double tol);

/// x-dot minus rho(x) y.
Eigen::VectorXd admissibility_residual(const AlgebroidChart& chart, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& xdot);

/// One structure constant entry, 0-based: C^c_{ab} = value.
struct StructureConstant {
  std::size_t a;
  std::size_t b;
  std::size_t c;
  double value;
};

AlgebroidChart tangent_bundle(std::size_t m);
AlgebroidChart lie_algebra(std::size_t n, const std::vector<StructureConstant>& constants, std::string name = "lie_algebra");
AlgebroidChart so3();
AlgebroidChart se2();
/// Anchor is minus the infinitesimal generators; generators[A][i] is the i-th component of the A-th generator.
AlgebroidChart action_algebroid(std::size_t m, std::size_t n, const std::vector<StructureConstant>& constants,
                                const std::vector<std::vector<Expr>>& generators);
/// Fiber order: base directions 1..m, then Lie algebra directions. connection[A][i] = A^A_i(x),
/// curvature[A][i][j] = B^A_{ij}(x); an empty curvature is derived from the connection.
AlgebroidChart atiyah_trivial(std::size_t m, std::size_t n_g, const std::vector<StructureConstant>& constants,
                              const std::vector<std::vector<Expr>>& connection,
                              std::vector<std::vector<std::vector<Expr>>> curvature = {});
AlgebroidChart elroy_beanie(double inertia1, double inertia2);

/// Dispatch by name with JSON parameters (see README for the parameter keys).
AlgebroidChart builtin_chart(const std::string& name, const nlohmann::json& params);

/// Parses a structure-constant list [{"A":1,"B":2,"C_index":3,"value":1.0}, ...] (1-based).
/// Rejects entries that contradict antisymmetry.
std::vector<StructureConstant> parse_structure_constants(const nlohmann::json& list, std::size_t n);

}  // namespace algmech
