#pragma once

#include "algmech/mechanics.hpp"
#include "algmech/sorusk.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace algmech {

using VectorField = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& s)>;

/// Fixed-step classical Runge-Kutta; the step is shrunk slightly so it divides the horizon.
struct Rk4 {
  double h = 1e-3;
};

/// Adaptive Dormand-Prince 5(4).
struct Rk45 {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h0 = 0.0;  // 0 picks T / 100
  std::size_t max_steps = 1000000;
};

using Method = std::variant<Rk4, Rk45>;

/// Accepted steps of an integration with field values at the nodes for Hermite dense output.
class Trajectory {
 public:
  std::vector<double> t;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> derivatives;

  std::size_t size() const { return t.size(); }
  std::size_t state_dim() const { return states.empty() ? 0 : static_cast<std::size_t>(states.front().size()); }
  double t_end() const { return t.empty() ? 0.0 : t.back(); }
  /// Largest step of the grid.
  double max_step() const;

  /// Cubic Hermite interpolation between accepted steps; exact at the nodes.
  Eigen::VectorXd at(double time) const;

  /// Adds a channel computed from the stored states; recomputation is a pure function of them.
  void add_monitor(const std::string& name, const std::function<double(double, const Eigen::VectorXd&)>& fn);
  const std::vector<std::string>& monitor_names() const { return monitor_names_; }
  const std::vector<double>& monitor(const std::string& name) const;
  /// Max over the grid of |channel(t) - channel(0)|.
  double monitor_drift(const std::string& name) const;
  double monitor_max_abs(const std::string& name) const;

  /// Appends another trajectory that starts where this one ends; its first node is dropped.
  void append(const Trajectory& other);

 private:
  std::vector<std::string> monitor_names_;
  std::vector<std::vector<double>> monitors_;
};

/// Integrates s' = field(t, s) from t = t0 to t0 + T. Field failures are rethrown with the time attached.
Trajectory integrate(const VectorField& field, const Eigen::VectorXd& s0, double T, const Method& method, double t0 = 0.0);

/// Derivative of order 1..3 of one state channel at an interior time, by 5-point central differences
/// on the dense output with sampling step max(1e-3, 10 * largest integration step).
double finite_difference_jet(const Trajectory& traj, std::size_t channel, int order, double t);

/// Same with an explicit sampling step.
double finite_difference_jet(const Trajectory& traj, std::size_t channel, int order, double t, double step);

/// CSV with header t, state names, monitor names; numbers in round-trip 17-digit form.
void write_csv(std::ostream& out, const Trajectory& traj, const std::vector<std::string>& state_names);
std::string format_number(double v);

// ---- shooting ----

/// Two-point problem for s' = field(t, s) on [0, T]: initial_state builds s(0) from the unknowns,
/// residual measures the boundary mismatch at s(T). Square: residual length = unknown count.
struct ShootingProblem {
  VectorField field;
  std::size_t unknown_count = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> initial_state;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual;
  double T = 1.0;
};

struct ShootingOptions {
  Method method = Rk4{1e-3};
  double newton_tol = 1e-10;
  std::size_t max_iter = 50;
  std::size_t segments = 1;
  double min_damping = 1.0 / 1024.0;
  double fd_step = 1e-7;
};

struct ShootingResult {
  bool converged = false;
  double residual_norm = 0.0;
  std::size_t iterations = 0;
  Eigen::VectorXd unknowns;
  Trajectory trajectory;
  std::string message;
};

/// Damped Newton with a finite-difference Jacobian. With segments > 1 the interior segment start
/// states join the unknowns and continuity is added to the residual (multiple shooting).
ShootingResult shoot(const ShootingProblem& problem, const Eigen::VectorXd& guess, const ShootingOptions& options);

// ---- oracles ----

/// Gradient of the trapezoid action sum_j w_j h L(x_j, y_j) along admissible variations
/// delta x = rho eta, delta y = eta-dot + C(y, eta) generated by a hat function eta at each node,
/// with eta-dot by central differences. Column k holds node k; columns whose variation would touch
/// the endpoints (k < 2 or k > N - 2) are zero. Along a smooth admissible path it approximates
/// -h times el_residual.
Eigen::MatrixXd oracle_action_gradient(const LagrangianProblem& prob, const std::vector<AlgebroidState>& path, double h,
                                       double eps = 1e-6);

/// Second-order version for L(x, y, z) with delta z the central difference of delta y. Nodes with
/// k < 3 or k > N - 3 are zero. Approximates +h times second_order_el_residual.
Eigen::MatrixXd oracle_action_gradient(const SecondOrderProblem& prob, const std::vector<SecondOrderState>& path, double h,
                                       double eps = 1e-6);

}  // namespace algmech
