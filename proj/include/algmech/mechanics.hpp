#pragma once

#include "algmech/algebroid.hpp"
#include "algmech/expr.hpp"
#include "algmech/field.hpp"

#include <Eigen/Dense>

#include <vector>

namespace algmech {

struct AlgebroidState {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// A point (x, y, z) of the admissible second-order bundle: z is the time derivative of y
/// along a curve whose base velocity is rho(x) y.
struct SecondOrderState {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd z;
};

/// Lagrangian L(x, y) on a chart. Inputs are named x1..xm, y1..yn.
class LagrangianProblem {
 public:
  LagrangianProblem(AlgebroidChart chart, Expr lagrangian);

  const AlgebroidChart& chart() const { return chart_; }
  const Expr& lagrangian() const { return lagrangian_; }
  const VariableLayout& layout() const { return compiled_.layout(); }
  Derivatives evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int order) const;

 private:
  AlgebroidChart chart_;
  Expr lagrangian_;
  CompiledExprs compiled_;
};

/// Hamiltonian H(x, p) on the dual bundle. Inputs are named x1..xm, p1..pn.
class HamiltonianProblem {
 public:
  HamiltonianProblem(AlgebroidChart chart, Expr hamiltonian);

  const AlgebroidChart& chart() const { return chart_; }
  const Expr& hamiltonian() const { return hamiltonian_; }
  Derivatives evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& p, int order) const;

 private:
  AlgebroidChart chart_;
  Expr hamiltonian_;
  CompiledExprs compiled_;
};

/// Force components (u_F)_A(x, y, t); inputs x1..xm, y1..yn, t.
class ForceSection {
 public:
  ForceSection() = default;
  ForceSection(std::size_t m, std::size_t n, std::vector<Expr> components);

  std::size_t size() const { return components_.size(); }
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t) const;

 private:
  std::vector<Expr> components_;
  CompiledExprs compiled_;
};

/// d/dt(dL/dy^A) + C^C_{AB} y^B dL/dy^C - rho^i_A dL/dx^i, the time derivative expanded with
/// x-dot = rho y and y-dot = z.
Eigen::VectorXd el_residual(const LagrangianProblem& prob, const SecondOrderState& s);
Eigen::VectorXd controlled_el_residual(const LagrangianProblem& prob, const SecondOrderState& s,
                                       const ForceSection& force, double t);
double energy(const LagrangianProblem& prob, const AlgebroidState& s);
/// Momenta p_A = dL/dy^A.
Eigen::VectorXd legendre(const LagrangianProblem& prob, const AlgebroidState& s);

/// Solves the Euler-Lagrange equations for y-dot; requires a nonsingular d2L/dy dy.
/// Returns (x-dot, y-dot) stacked.
Eigen::VectorXd el_vector_field(const LagrangianProblem& prob, const AlgebroidState& s, const ForceSection* force = nullptr,
                                double t = 0.0);

struct HamiltonRates {
  Eigen::VectorXd xdot;
  Eigen::VectorXd pdot;
};

/// x-dot = rho dH/dp; p-dot_A = -rho^i_A dH/dx^i - p_C C^C_{AB} dH/dp_B.
HamiltonRates hamilton_field(const HamiltonianProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& p);

/// Symbolic left-hand side of the controlled Euler-Lagrange equations as expressions in
/// (x, y, z): F_A = d/dt(dL/dy^A) + C^C_{AB} y^B dL/dy^C - rho^i_A dL/dx^i.
std::vector<Expr> el_operator(const AlgebroidChart& chart, const Expr& lagrangian);

}  // namespace algmech
