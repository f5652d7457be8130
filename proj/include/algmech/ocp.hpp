#pragma once

#include "algmech/algebroid.hpp"
#include "algmech/expr.hpp"
#include "algmech/solve.hpp"
#include "algmech/sorusk.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace algmech {

/// Optimal control of a mechanical system L(x, y) by forces on the actuated fiber directions.
/// The cost is an expression in x, y and u1..uk, where u_i drives fiber direction actuation[i].
struct ControlProblem {
  AlgebroidChart chart;
  Expr lagrangian;
  Expr cost;
  std::vector<std::size_t> actuation;  // 0-based, distinct

  std::size_t control_count() const { return actuation.size(); }
  bool fully_actuated() const { return actuation.size() == chart.fiber_rank(); }
  std::vector<std::size_t> unactuated() const;
};

/// Checks index ranges and that the cost reads only x, y and u1..uk.
void check_control_problem(const ControlProblem& cp);

/// Second-order Lagrangian cost(x, y, F(x, y, z)) with F the controlled Euler-Lagrange operator.
SecondOrderProblem build_fully_actuated(const ControlProblem& cp);

/// The constrained problem of an underactuated system together with its reduced form, in which
/// z^alpha = G^alpha(x, y, z^a) solves the unactuated equations.
struct ReducedUnderactuatedProblem {
  SecondOrderProblem problem;           // constrained_multipliers mode with the elimination installed
  std::vector<Expr> G;                  // one per unactuated index
  Expr reduced_lagrangian;              // the second-order Lagrangian with z^alpha = G^alpha
  std::vector<std::vector<Expr>> W;     // d2L / dy^alpha dy^beta

  const ReducedSystem& system() const { return problem.reduced(); }
};

ReducedUnderactuatedProblem build_underactuated(const ControlProblem& cp);

/// Rates of (x, y, z^a, p, pbar) for the reduced underactuated system.
PontryaginState underactuated_optimality_field(const ReducedUnderactuatedProblem& red, const PontryaginState& s);

/// Controls recovered from a state: u_i = F_{actuation[i]}(x, y, z) with z holding all n accelerations.
class ControlReconstruction {
 public:
  explicit ControlReconstruction(const ControlProblem& cp);
  Eigen::VectorXd operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& z) const;

 private:
  CompiledExprs f_;
};

/// Boundary data of a second-order problem. Without z0 the free initial accelerations are unknowns;
/// with zT their final values join the residual.
struct Boundary {
  Eigen::VectorXd x0;
  Eigen::VectorXd y0;
  Eigen::VectorXd xT;
  Eigen::VectorXd yT;
  std::optional<Eigen::VectorXd> z0;
  std::optional<Eigen::VectorXd> zT;
  double T = 1.0;
};

/// Shooting map over the reduced system: unknowns are z^a(0) when z0 is absent, then p(0), then
/// pbar_alpha(0); pbar_a(0) follows from the primary constraint. Residuals are x(T) - xT,
/// y(T) - yT and, when zT is given, z^a(T) - zT^a.
ShootingProblem optimality_shooting(const ReducedSystem& sys, const Boundary& b);

/// Shooting unknowns recovered from a full initial state (inverse of the initial_state map).
Eigen::VectorXd shooting_unknowns(const ReducedSystem& sys, const Boundary& b, const PontryaginState& s0);

}  // namespace algmech
