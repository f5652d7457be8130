#include "algmech/mechanics.hpp"

#include "algmech/error.hpp"

namespace algmech {

namespace {

Eigen::VectorXd stack(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd v(a.size() + b.size());
  v << a, b;
  return v;
}

void check_dims(const AlgebroidChart& chart, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (static_cast<std::size_t>(x.size()) != chart.base_dim() || static_cast<std::size_t>(y.size()) != chart.fiber_rank()) {
    throw DimensionError("state dimensions do not match the chart");
  }
}

}  // namespace

LagrangianProblem::LagrangianProblem(AlgebroidChart chart, Expr lagrangian)
    : chart_(std::move(chart)), lagrangian_(std::move(lagrangian)) {
  VariableLayout layout{{"x", chart_.base_dim()}, {"y", chart_.fiber_rank()}};
  require_variables(lagrangian_, layout, "Lagrangian");
  compiled_ = CompiledExprs({lagrangian_}, layout);
}

Derivatives LagrangianProblem::evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int order) const {
  check_dims(chart_, x, y);
  const Eigen::VectorXd xy = stack(x, y);
  return compiled_.evaluate(std::span<const double>(xy.data(), static_cast<std::size_t>(xy.size())), order);
}

HamiltonianProblem::HamiltonianProblem(AlgebroidChart chart, Expr hamiltonian)
    : chart_(std::move(chart)), hamiltonian_(std::move(hamiltonian)) {
  VariableLayout layout{{"x", chart_.base_dim()}, {"p", chart_.fiber_rank()}};
  require_variables(hamiltonian_, layout, "Hamiltonian");
  compiled_ = CompiledExprs({hamiltonian_}, layout);
}

Derivatives HamiltonianProblem::evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& p, int order) const {
  check_dims(chart_, x, p);
  const Eigen::VectorXd xp = stack(x, p);
  return compiled_.evaluate(std::span<const double>(xp.data(), static_cast<std::size_t>(xp.size())), order);
}

ForceSection::ForceSection(std::size_t m, std::size_t n, std::vector<Expr> components) : components_(std::move(components)) {
  if (components_.size() != n) throw DimensionError("force needs one component per fiber direction");
  VariableLayout layout{{"x", m}, {"y", n}};
  layout.add("t");
  for (const auto& c : components_) require_variables(c, layout, "force component");
  compiled_ = CompiledExprs(components_, layout);
}

Eigen::VectorXd ForceSection::evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double t) const {
  if (components_.empty()) return Eigen::VectorXd::Zero(y.size());
  Eigen::VectorXd pt(x.size() + y.size() + 1);
  pt << x, y, t;
  return compiled_.values(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())));
}

Eigen::VectorXd el_residual(const LagrangianProblem& prob, const SecondOrderState& s) {
  const auto& chart = prob.chart();
  check_dims(chart, s.x, s.y);
  if (s.z.size() != s.y.size()) throw DimensionError("z has the wrong length");
  const auto m = static_cast<Eigen::Index>(chart.base_dim());
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  const ChartPoint cp = chart.at(s.x);
  const Derivatives d = prob.evaluate(s.x, s.y, 2);
  const Eigen::VectorXd grad = d.jacobian.row(0).transpose();
  const Eigen::MatrixXd& hess = d.hessian[0];
  const Eigen::VectorXd Lx = grad.head(m);
  const Eigen::VectorXd Ly = grad.tail(n);
  const Eigen::VectorXd xdot = cp.rho * s.y;

  Eigen::VectorXd r = hess.block(m, 0, n, m) * xdot + hess.block(m, m, n, n) * s.z - cp.rho.transpose() * Lx;
  for (Eigen::Index a = 0; a < n; ++a) {
    double bracket = 0.0;
    for (Eigen::Index b = 0; b < n; ++b)
      for (Eigen::Index c = 0; c < n; ++c) bracket += cp.C(c, a, b) * s.y[b] * Ly[c];
    r[a] += bracket;
  }
  return r;
}

Eigen::VectorXd controlled_el_residual(const LagrangianProblem& prob, const SecondOrderState& s, const ForceSection& force,
                                       double t) {
  return el_residual(prob, s) - force.evaluate(s.x, s.y, t);
}

double energy(const LagrangianProblem& prob, const AlgebroidState& s) {
  const Derivatives d = prob.evaluate(s.x, s.y, 1);
  const auto n = s.y.size();
  return d.jacobian.row(0).tail(n).dot(s.y) - d.value[0];
}

Eigen::VectorXd legendre(const LagrangianProblem& prob, const AlgebroidState& s) {
  const Derivatives d = prob.evaluate(s.x, s.y, 1);
  return d.jacobian.row(0).tail(s.y.size()).transpose();
}

Eigen::VectorXd el_vector_field(const LagrangianProblem& prob, const AlgebroidState& s, const ForceSection* force, double t) {
  const auto& chart = prob.chart();
  const auto m = static_cast<Eigen::Index>(chart.base_dim());
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  const ChartPoint cp = chart.at(s.x);
  const Derivatives d = prob.evaluate(s.x, s.y, 2);
  const Eigen::VectorXd grad = d.jacobian.row(0).transpose();
  const Eigen::MatrixXd& hess = d.hessian[0];
  const Eigen::VectorXd Ly = grad.tail(n);
  const Eigen::VectorXd xdot = cp.rho * s.y;
  // W z = rho^T Lx - L_yx x-dot - C y Ly + u
  Eigen::VectorXd rhs = cp.rho.transpose() * grad.head(m) - hess.block(m, 0, n, m) * xdot;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      for (Eigen::Index c = 0; c < n; ++c) rhs[a] -= cp.C(c, a, b) * s.y[b] * Ly[c];
  if (force) rhs += force->evaluate(s.x, s.y, t);
  const Eigen::MatrixXd W = hess.block(m, m, n, n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(W);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw RegularityError("d2L/dy dy is singular; the Euler-Lagrange equations are not explicit", W);
  return stack(xdot, lu.solve(rhs));
}

HamiltonRates hamilton_field(const HamiltonianProblem& prob, const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
  const auto& chart = prob.chart();
  const auto m = static_cast<Eigen::Index>(chart.base_dim());
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  const ChartPoint cp = chart.at(x);
  const Derivatives d = prob.evaluate(x, p, 1);
  const Eigen::VectorXd Hx = d.jacobian.row(0).head(m).transpose();
  const Eigen::VectorXd Hp = d.jacobian.row(0).tail(n).transpose();
  HamiltonRates r;
  r.xdot = cp.rho * Hp;
  r.pdot = -cp.rho.transpose() * Hx;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b)
      for (Eigen::Index c = 0; c < n; ++c) r.pdot[a] -= p[c] * cp.C(c, a, b) * Hp[b];
  return r;
}

std::vector<Expr> el_operator(const AlgebroidChart& chart, const Expr& lagrangian) {
  const std::size_t m = chart.base_dim();
  const std::size_t n = chart.fiber_rank();
  const auto x = coordinates("x", m);
  const auto y = coordinates("y", n);
  const auto z = coordinates("z", n);
  std::vector<Expr> xdot(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t b = 0; b < n; ++b) xdot[i] += chart.anchor(i, b) * y[b];
  std::vector<Expr> Ly(n), Lx(m);
  for (std::size_t a = 0; a < n; ++a) Ly[a] = differentiate(lagrangian, y[a].name());
  for (std::size_t i = 0; i < m; ++i) Lx[i] = differentiate(lagrangian, x[i].name());
  std::vector<Expr> F(n);
  for (std::size_t a = 0; a < n; ++a) {
    Expr f;
    for (std::size_t i = 0; i < m; ++i) f += differentiate(Ly[a], x[i].name()) * xdot[i];
    for (std::size_t b = 0; b < n; ++b) f += differentiate(Ly[a], y[b].name()) * z[b];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c) {
        const Expr cab = chart.structure(c, a, b);
        if (!cab.is_constant(0.0)) f += cab * y[b] * Ly[c];
      }
    for (std::size_t i = 0; i < m; ++i) f -= chart.anchor(i, a) * Lx[i];
    F[a] = f;
  }
  return F;
}

}  // namespace algmech
