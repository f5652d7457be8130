#pragma once

#include "algmech/algebroid.hpp"
#include "algmech/expr.hpp"
#include "algmech/field.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace algmech {

/// Point (x, y, z, p, pbar) of the second-order Pontryagin bundle. In reduced systems z holds
/// only the free components z^a.
struct PontryaginState {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd z;
  Eigen::VectorXd p;
  Eigen::VectorXd pbar;

  Eigen::VectorXd flatten() const;
  /// Splits v into blocks of sizes m, n, k, n, n.
  static PontryaginState unflatten(const Eigen::VectorXd& v, std::size_t m, std::size_t n, std::size_t k);
};

enum class Mode { unconstrained, constrained_multipliers, vakonomic };

const char* mode_name(Mode mode);

/// z^alpha = psi^alpha for the listed fiber indices (0-based). For second-order problems psi
/// depends on (x, y, z^a) with a the remaining indices; for vakonomic problems it depends on
/// (x, y^a) and fixes y^alpha.
struct Elimination {
  std::vector<std::size_t> constrained;
  std::vector<Expr> psi;
};

/// Second-order system after eliminating some accelerations: z^alpha = G^alpha(x, y, z^a).
/// With no eliminated indices this is the plain unconstrained optimality system.
class ReducedSystem {
 public:
  ReducedSystem(AlgebroidChart chart, Expr lagrangian, std::vector<std::size_t> free_indices, std::vector<Expr> g);

  const AlgebroidChart& chart() const { return chart_; }
  const Expr& lagrangian() const { return lagrangian_; }
  const std::vector<Expr>& g() const { return g_; }
  const std::vector<std::size_t>& free_indices() const { return free_; }
  const std::vector<std::size_t>& eliminated_indices() const { return eliminated_; }
  std::size_t free_count() const { return free_.size(); }
  /// Names of the z inputs, z<a+1> for each free index a.
  const VariableLayout& input_layout() const { return compiled_.layout(); }

  /// (x-dot, y-dot, z^a-dot, p-dot, pbar-dot); z^a-dot solves the time derivative of the
  /// primary constraint, so the flow is tangent to it.
  PontryaginState field(const PontryaginState& s) const;
  double hamiltonian(const PontryaginState& s) const;
  /// pbar_a - dL/dz^a + pbar_beta dG^beta/dz^a
  Eigen::VectorXd primary_constraint(const PontryaginState& s) const;
  /// d2L/dz^a dz^b - pbar_beta d2G^beta/dz^a dz^b
  Eigen::MatrixXd regularity_matrix(const PontryaginState& s) const;
  /// All n accelerations, eliminated ones filled from G.
  Eigen::VectorXd full_z(const PontryaginState& s) const;
  /// pbar_a set so the primary constraint holds; other entries unchanged.
  PontryaginState project_to_primary(PontryaginState s) const;

 private:
  AlgebroidChart chart_;
  Expr lagrangian_;
  std::vector<std::size_t> free_;
  std::vector<std::size_t> eliminated_;
  std::vector<Expr> g_;
  CompiledExprs compiled_;  // outputs: L, G^1..G^mbar over (x, y, z^a)
  Eigen::VectorXd point(const PontryaginState& s) const;
};

/// Second-order variational problem L(x, y, z) with optional constraints Phi^alpha(x, y, z).
/// In vakonomic mode L and the constraints are first order, L(x, y), and an elimination of
/// y^alpha must be installed.
class SecondOrderProblem {
 public:
  SecondOrderProblem(AlgebroidChart chart, Expr lagrangian, std::vector<Expr> constraints = {},
                     Mode mode = Mode::unconstrained, std::optional<Elimination> elimination = std::nullopt);

  const AlgebroidChart& chart() const;
  const Expr& lagrangian() const;
  const std::vector<Expr>& constraints() const;
  Mode mode() const;
  const std::optional<Elimination>& elimination() const;
  std::size_t base_dim() const { return chart().base_dim(); }
  std::size_t fiber_rank() const { return chart().fiber_rank(); }

  /// Unconstrained: the identity reduction. With an elimination installed: the reduced system.
  const ReducedSystem& reduced() const;

  /// L and Phi with derivatives up to order 2 at (x, y, z); outputs L, Phi^1.. .
  Derivatives evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& z, int order) const;

  struct Impl;
  const Impl& impl() const { return *impl_; }

 private:
  std::shared_ptr<const Impl> impl_;
};

/// Unconstrained and multiplier modes: pbar.z + p.y - L. With an elimination installed:
/// p.y + pbar_a z^a + pbar_alpha psi^alpha - L(x, y, z^a, psi).
double pontryagin_hamiltonian(const SecondOrderProblem& prob, const PontryaginState& s);

/// Matrix of the presymplectic 2-section in the basis (e11_A, e21_A, e12^A, e22^A, ez_A), 5n square.
/// Pairings e11/e12 and e21/e22 are identity blocks, the e11 x e11 block is C^C_{AB} p_C and the
/// ez rows and columns vanish.
Eigen::MatrixXd presymplectic_matrix(const SecondOrderProblem& prob, const PontryaginState& s);

/// Components of dH on the same basis; e11_A picks up rho^i_A d/dx^i.
Eigen::VectorXd hamiltonian_differential(const SecondOrderProblem& prob, const PontryaginState& s);

struct RegularityResult {
  Eigen::MatrixXd matrix;
  double min_singular_value = 0.0;
  double condition = 0.0;
  bool regular = false;
  std::string check;  // short name of the criterion used
};

/// Unconstrained: d2L/dz dz (reduced matrix if an elimination is installed). Multipliers: the
/// bordered matrix. Vakonomic: d2L~/dy^a dy^b - p_alpha d2psi^alpha/dy^a dy^b, with y^a read
/// from s.y at the free indices.
RegularityResult regularity_test(const SecondOrderProblem& prob, const PontryaginState& s,
                                 const std::optional<Eigen::VectorXd>& multipliers = std::nullopt, double tol = 1e-9);

/// Time derivative of s along the optimality system (unconstrained mode, or any problem with
/// an elimination installed, in which case s.z holds the free accelerations only).
PontryaginState optimality_field(const SecondOrderProblem& prob, const PontryaginState& s);

struct MultiplierRates {
  PontryaginState rates;
  Eigen::VectorXd lambda_dot;
};

/// Multiplier form of the constrained system: L_lambda = L + lambda_alpha Phi^alpha with
/// pbar = dL_lambda/dz; z-dot and lambda-dot solve the bordered system that keeps both
/// Phi = 0 and the primary constraint.
MultiplierRates multiplier_field(const SecondOrderProblem& prob, const PontryaginState& s, const Eigen::VectorXd& lambda);

/// Least-squares multipliers for which pbar = dL/dz + lambda dPhi/dz.
Eigen::VectorXd consistent_multipliers(const SecondOrderProblem& prob, const PontryaginState& s);

/// Time derivatives of y: y, y', y'', y'''. The base curve follows from x-dot = rho(x) y.
struct SecondOrderJet {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd y1;
  Eigen::VectorXd y2;
  Eigen::VectorXd y3;
};

/// d2/dt2(dL/dz^A) + C^C_{AB} y^B d/dt(dL/dz^C) - d/dt(dL/dy^A) - C^C_{AB} y^B dL/dy^C + rho^i_A dL/dx^i.
Eigen::VectorXd second_order_el_residual(const SecondOrderProblem& prob, const SecondOrderJet& jet);

struct VakonomicState {
  Eigen::VectorXd x;
  Eigen::VectorXd p;  // all n momenta
  Eigen::VectorXd y;  // free fiber velocities y^a
};

/// Vakonomic equations with y^alpha = psi^alpha(x, y^a): rates of x, of all p_A and of y^a.
VakonomicState vakonomic_field(const SecondOrderProblem& prob, const VakonomicState& s);
double vakonomic_hamiltonian(const SecondOrderProblem& prob, const VakonomicState& s);
/// p_a - dL~/dy^a + p_alpha dpsi^alpha/dy^a; vanishes on the vakonomic constraint set.
Eigen::VectorXd vakonomic_constraint(const SecondOrderProblem& prob, const VakonomicState& s);

/// Elimination for constraints affine in the listed accelerations: Phi = W z^alpha + r.
/// Expressions for W^{-1} are formed numerically when W is constant, otherwise by cofactors
/// (at most 4 eliminated indices).
Elimination solve_affine(const std::vector<Expr>& constraints, const std::vector<std::size_t>& indices, std::size_t n);

// ---- constraint algorithm ----

/// Presymplectic system on a coordinate space: 2-section omega on a frame of r directions,
/// the differential of H on that frame as expressions, and the anchor taking frame directions
/// to coordinate tangent vectors.
struct PresymplecticSystem {
  VariableLayout layout;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> omega;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> anchor;  // coordinates x frame
  std::vector<Expr> dH;
  std::vector<Expr> initial_constraints;
};

struct ConstraintStep {
  Eigen::MatrixXd orthogonal;  // frame directions omega-orthogonal to the admitted ones (columns)
  std::size_t kernel_dim = 0;
  Eigen::VectorXd values;      // <dH, column>
  bool solvable = true;
};

/// One step: directions omega-orthogonal to tangent_basis, and dH on them.
ConstraintStep constraint_step(const Eigen::MatrixXd& omega, const Eigen::VectorXd& dH, const Eigen::MatrixXd& tangent_basis,
                               double tol);

struct ConstraintLevel {
  std::size_t level = 0;
  std::size_t manifold_dim = 0;
  std::size_t kernel_dim = 0;
  std::vector<Expr> candidates;
  Eigen::VectorXd candidate_values;  // consistency residuals at the projected point
  std::vector<Expr> new_constraints;
  double projection_residual = 0.0;
  bool stabilized = false;
};

struct ConstraintChainReport {
  std::vector<ConstraintLevel> levels;
  std::vector<Expr> constraints;  // all constraints found, in order
  bool stabilized = false;
  bool consistent = true;
  std::string note;
  std::size_t nontrivial_levels() const;
};

ConstraintChainReport run_constraint_algorithm(const PresymplecticSystem& system, const Eigen::VectorXd& w,
                                               std::size_t max_levels, double tol = 1e-9);
ConstraintChainReport run_constraint_algorithm(const SecondOrderProblem& prob, const PontryaginState& s,
                                               std::size_t max_levels, double tol = 1e-9);
/// The presymplectic data of an unconstrained or multiplier-mode problem on (x, y, z, p, pbar).
PresymplecticSystem presymplectic_system(const SecondOrderProblem& prob);

}  // namespace algmech
