#include "algmech/sorusk.hpp"

#include "algmech/error.hpp"
#include "algmech/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace algmech {

Eigen::VectorXd PontryaginState::flatten() const {
  Eigen::VectorXd v(x.size() + y.size() + z.size() + p.size() + pbar.size());
  v << x, y, z, p, pbar;
  return v;
}

PontryaginState PontryaginState::unflatten(const Eigen::VectorXd& v, std::size_t m, std::size_t n, std::size_t k) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  if (v.size() != M + 3 * N + K) throw DimensionError("state vector has the wrong length");
  PontryaginState s;
  s.x = v.segment(0, M);
  s.y = v.segment(M, N);
  s.z = v.segment(M + N, K);
  s.p = v.segment(M + N + K, N);
  s.pbar = v.segment(M + 2 * N + K, N);
  return s;
}

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::unconstrained: return "unconstrained";
    case Mode::constrained_multipliers: return "constrained_multipliers";
    case Mode::vakonomic: return "vakonomic";
  }
  return "?";
}

namespace {

std::vector<std::size_t> complement(const std::vector<std::size_t>& idx, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < n; ++a)
    if (std::find(idx.begin(), idx.end(), a) == idx.end()) out.push_back(a);
  return out;
}

void check_indices(const std::vector<std::size_t>& idx, std::size_t n) {
  std::vector<std::size_t> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw Error("repeated fiber index");
  for (auto a : idx)
    if (a >= n) throw Error("fiber index out of range");
}

double bracket_term(const StructureValues& C, const Eigen::VectorXd& y, const Eigen::VectorXd& w, Eigen::Index a) {
  // sum over B, D of C^D_{aB} y^B w_D
  double t = 0.0;
  const auto n = static_cast<Eigen::Index>(C.n);
  for (Eigen::Index b = 0; b < n; ++b) {
    if (y[b] == 0.0) continue;
    for (Eigen::Index d = 0; d < n; ++d) t += C(d, a, b) * y[b] * w[d];
  }
  return t;
}

Eigen::VectorXd solve_regular(const Eigen::MatrixXd& M, const Eigen::VectorXd& rhs, const char* what) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw RegularityError(std::string(what) + " is singular at this state", M);
  return lu.solve(rhs);
}

}  // namespace

// ---- ReducedSystem ----

ReducedSystem::ReducedSystem(AlgebroidChart chart, Expr lagrangian, std::vector<std::size_t> free_indices, std::vector<Expr> g)
    : chart_(std::move(chart)), lagrangian_(std::move(lagrangian)), free_(std::move(free_indices)), g_(std::move(g)) {
  const std::size_t n = chart_.fiber_rank();
  check_indices(free_, n);
  eliminated_ = complement(free_, n);
  if (g_.size() != eliminated_.size()) throw DimensionError("need one eliminated acceleration per constrained index");
  VariableLayout layout{{"x", chart_.base_dim()}, {"y", n}};
  for (auto a : free_) layout.add(coordinate_name("z", a));
  std::vector<Expr> outputs{lagrangian_};
  outputs.insert(outputs.end(), g_.begin(), g_.end());
  for (const auto& e : outputs) require_variables(e, layout, "reduced second-order system");
  compiled_ = CompiledExprs(outputs, layout);
}

Eigen::VectorXd ReducedSystem::point(const PontryaginState& s) const {
  const auto m = static_cast<Eigen::Index>(chart_.base_dim());
  const auto n = static_cast<Eigen::Index>(chart_.fiber_rank());
  const auto k = static_cast<Eigen::Index>(free_.size());
  if (s.x.size() != m || s.y.size() != n || s.p.size() != n || s.pbar.size() != n) {
    throw DimensionError("Pontryagin state dimensions do not match the problem");
  }
  Eigen::VectorXd pt(m + n + k);
  if (s.z.size() == k) {
    pt << s.x, s.y, s.z;
  } else if (s.z.size() == n) {
    pt.head(m + n) << s.x, s.y;
    for (Eigen::Index a = 0; a < k; ++a) pt[m + n + a] = s.z[static_cast<Eigen::Index>(free_[a])];
  } else {
    throw DimensionError("z has the wrong length");
  }
  return pt;
}

PontryaginState ReducedSystem::field(const PontryaginState& s) const {
  const auto m = static_cast<Eigen::Index>(chart_.base_dim());
  const auto n = static_cast<Eigen::Index>(chart_.fiber_rank());
  const auto k = static_cast<Eigen::Index>(free_.size());
  const auto q = static_cast<Eigen::Index>(eliminated_.size());
  const Eigen::VectorXd pt = point(s);
  const ChartPoint cp = chart_.at(s.x);
  const Derivatives d = compiled_.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), 2);

  // Effective Lagrangian derivatives: L - pbar_beta G^beta, differentiated; index blocks x | y | z^a.
  Eigen::VectorXd grad = d.jacobian.row(0).transpose();
  Eigen::MatrixXd hess = d.hessian[0];
  Eigen::VectorXd zfull(n);
  for (Eigen::Index a = 0; a < k; ++a) zfull[static_cast<Eigen::Index>(free_[a])] = pt[m + n + a];
  for (Eigen::Index b = 0; b < q; ++b) {
    const double pb = s.pbar[static_cast<Eigen::Index>(eliminated_[b])];
    zfull[static_cast<Eigen::Index>(eliminated_[b])] = d.value[1 + b];
    grad -= pb * d.jacobian.row(1 + b).transpose();
    hess -= pb * d.hessian[static_cast<std::size_t>(1 + b)];
  }

  PontryaginState r;
  r.x = cp.rho * s.y;
  r.y = zfull;
  r.p = cp.rho.transpose() * grad.head(m);
  for (Eigen::Index a = 0; a < n; ++a) r.p[a] -= bracket_term(cp.C, s.y, s.p, a);
  r.pbar = -s.p + grad.segment(m, n);

  // d/dt of the primary constraint = 0 gives the free accelerations.
  Eigen::VectorXd rhs(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    rhs[a] = r.pbar[static_cast<Eigen::Index>(free_[a])];
    for (Eigen::Index b = 0; b < q; ++b) rhs[a] += r.pbar[static_cast<Eigen::Index>(eliminated_[b])] * d.jacobian(1 + b, m + n + a);
  }
  rhs -= hess.block(m + n, 0, k, m) * r.x + hess.block(m + n, m, k, n) * r.y;
  r.z = solve_regular(hess.block(m + n, m + n, k, k), rhs, "second-order Hessian d2L/dz dz");
  return r;
}

double ReducedSystem::hamiltonian(const PontryaginState& s) const {
  const auto m = static_cast<Eigen::Index>(chart_.base_dim());
  const auto n = static_cast<Eigen::Index>(chart_.fiber_rank());
  const Eigen::VectorXd pt = point(s);
  const Eigen::VectorXd v = compiled_.values(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())));
  double h = s.p.dot(s.y) - v[0];
  for (std::size_t a = 0; a < free_.size(); ++a) h += s.pbar[static_cast<Eigen::Index>(free_[a])] * pt[m + n + static_cast<Eigen::Index>(a)];
  for (std::size_t b = 0; b < eliminated_.size(); ++b) h += s.pbar[static_cast<Eigen::Index>(eliminated_[b])] * v[static_cast<Eigen::Index>(1 + b)];
  return h;
}

Eigen::VectorXd ReducedSystem::primary_constraint(const PontryaginState& s) const {
  const auto m = static_cast<Eigen::Index>(chart_.base_dim());
  const auto n = static_cast<Eigen::Index>(chart_.fiber_rank());
  const auto k = static_cast<Eigen::Index>(free_.size());
  const Eigen::VectorXd pt = point(s);
  const Derivatives d = compiled_.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), 1);
  Eigen::VectorXd c(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    c[a] = s.pbar[static_cast<Eigen::Index>(free_[a])] - d.jacobian(0, m + n + a);
    for (std::size_t b = 0; b < eliminated_.size(); ++b) {
      c[a] += s.pbar[static_cast<Eigen::Index>(eliminated_[b])] * d.jacobian(static_cast<Eigen::Index>(1 + b), m + n + a);
    }
  }
  return c;
}

Eigen::MatrixXd ReducedSystem::regularity_matrix(const PontryaginState& s) const {
  const auto m = static_cast<Eigen::Index>(chart_.base_dim());
  const auto n = static_cast<Eigen::Index>(chart_.fiber_rank());
  const auto k = static_cast<Eigen::Index>(free_.size());
  const Eigen::VectorXd pt = point(s);
  const Derivatives d = compiled_.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), 2);
  Eigen::MatrixXd M = d.hessian[0].block(m + n, m + n, k, k);
  for (std::size_t b = 0; b < eliminated_.size(); ++b) {
    M -= s.pbar[static_cast<Eigen::Index>(eliminated_[b])] * d.hessian[1 + b].block(m + n, m + n, k, k);
  }
  return M;
}

Eigen::VectorXd ReducedSystem::full_z(const PontryaginState& s) const {
  const auto m = static_cast<Eigen::Index>(chart_.base_dim());
  const auto n = static_cast<Eigen::Index>(chart_.fiber_rank());
  const Eigen::VectorXd pt = point(s);
  const Eigen::VectorXd v = compiled_.values(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())));
  Eigen::VectorXd z(n);
  for (std::size_t a = 0; a < free_.size(); ++a) z[static_cast<Eigen::Index>(free_[a])] = pt[m + n + static_cast<Eigen::Index>(a)];
  for (std::size_t b = 0; b < eliminated_.size(); ++b) z[static_cast<Eigen::Index>(eliminated_[b])] = v[static_cast<Eigen::Index>(1 + b)];
  return z;
}

PontryaginState ReducedSystem::project_to_primary(PontryaginState s) const {
  const Eigen::VectorXd c = primary_constraint(s);
  for (std::size_t a = 0; a < free_.size(); ++a) s.pbar[static_cast<Eigen::Index>(free_[a])] -= c[static_cast<Eigen::Index>(a)];
  return s;
}

// ---- SecondOrderProblem ----

struct SecondOrderProblem::Impl {
  AlgebroidChart chart;
  Expr lagrangian;
  std::vector<Expr> constraints;
  Mode mode = Mode::unconstrained;
  std::optional<Elimination> elimination;

  std::optional<ReducedSystem> reduced;
  CompiledExprs full;      // L, Phi over (x, y, z)
  CompiledExprs el_parts;  // dL/dz, dL/dy, dL/dx over (x, y, z)

  std::vector<std::size_t> vfree;
  std::vector<std::size_t> veliminated;
  Expr vlagrangian;        // L with y^alpha = psi^alpha
  CompiledExprs vak;       // L~, psi over (x, y^a)
};

SecondOrderProblem::SecondOrderProblem(AlgebroidChart chart, Expr lagrangian, std::vector<Expr> constraints, Mode mode,
                                       std::optional<Elimination> elimination) {
  auto impl = std::make_shared<Impl>();
  impl->chart = std::move(chart);
  impl->lagrangian = std::move(lagrangian);
  impl->constraints = std::move(constraints);
  impl->mode = mode;
  impl->elimination = std::move(elimination);
  const std::size_t m = impl->chart.base_dim();
  const std::size_t n = impl->chart.fiber_rank();
  const auto x = coordinates("x", m);
  const auto y = coordinates("y", n);
  const auto z = coordinates("z", n);

  if (mode == Mode::unconstrained && !impl->constraints.empty()) throw Error("unconstrained mode takes no constraints");
  if (mode == Mode::constrained_multipliers && impl->constraints.empty() && !impl->elimination) {
    throw Error("constrained mode needs constraint functions");
  }
  if (impl->constraints.size() > n) throw Error("more constraints than fiber directions");

  if (mode == Mode::vakonomic) {
    if (!impl->elimination) throw Error("vakonomic mode needs an installed elimination of the constrained velocities");
    const auto& el = *impl->elimination;
    check_indices(el.constrained, n);
    if (el.psi.size() != el.constrained.size()) throw DimensionError("elimination needs one function per constrained index");
    impl->veliminated = el.constrained;
    impl->vfree = complement(el.constrained, n);
    VariableLayout lay{{"x", m}};
    for (auto a : impl->vfree) lay.add(coordinate_name("y", a));
    VariableLayout full_lay{{"x", m}, {"y", n}};
    require_variables(impl->lagrangian, full_lay, "vakonomic Lagrangian");
    std::map<std::string, Expr> sub;
    for (std::size_t b = 0; b < el.constrained.size(); ++b) {
      require_variables(el.psi[b], lay, "elimination function");
      sub[coordinate_name("y", el.constrained[b])] = el.psi[b];
    }
    impl->vlagrangian = substitute(impl->lagrangian, sub);
    std::vector<Expr> outputs{impl->vlagrangian};
    outputs.insert(outputs.end(), el.psi.begin(), el.psi.end());
    impl->vak = CompiledExprs(outputs, lay);
    impl_ = std::move(impl);
    return;
  }

  VariableLayout lay{{"x", m}, {"y", n}, {"z", n}};
  require_variables(impl->lagrangian, lay, "second-order Lagrangian");
  for (const auto& c : impl->constraints) require_variables(c, lay, "constraint");
  std::vector<Expr> outputs{impl->lagrangian};
  outputs.insert(outputs.end(), impl->constraints.begin(), impl->constraints.end());
  impl->full = CompiledExprs(outputs, lay);

  std::vector<Expr> parts;
  for (std::size_t a = 0; a < n; ++a) parts.push_back(differentiate(impl->lagrangian, z[a].name()));
  for (std::size_t a = 0; a < n; ++a) parts.push_back(differentiate(impl->lagrangian, y[a].name()));
  for (std::size_t i = 0; i < m; ++i) parts.push_back(differentiate(impl->lagrangian, x[i].name()));
  impl->el_parts = CompiledExprs(parts, lay);

  if (impl->elimination) {
    const auto& el = *impl->elimination;
    check_indices(el.constrained, n);
    if (el.psi.size() != el.constrained.size()) throw DimensionError("elimination needs one function per constrained index");
    std::map<std::string, Expr> sub;
    for (std::size_t b = 0; b < el.constrained.size(); ++b) sub[coordinate_name("z", el.constrained[b])] = el.psi[b];
    impl->reduced.emplace(impl->chart, substitute(impl->lagrangian, sub), complement(el.constrained, n), el.psi);
  } else if (mode == Mode::unconstrained) {
    std::vector<std::size_t> all(n);
    for (std::size_t a = 0; a < n; ++a) all[a] = a;
    impl->reduced.emplace(impl->chart, impl->lagrangian, all, std::vector<Expr>{});
  }
  impl_ = std::move(impl);
}

const AlgebroidChart& SecondOrderProblem::chart() const { return impl_->chart; }
const Expr& SecondOrderProblem::lagrangian() const { return impl_->lagrangian; }
const std::vector<Expr>& SecondOrderProblem::constraints() const { return impl_->constraints; }
Mode SecondOrderProblem::mode() const { return impl_->mode; }
const std::optional<Elimination>& SecondOrderProblem::elimination() const { return impl_->elimination; }

const ReducedSystem& SecondOrderProblem::reduced() const {
  if (!impl_->reduced) throw Error("no reduced system: install an elimination or use unconstrained mode");
  return *impl_->reduced;
}

Derivatives SecondOrderProblem::evaluate(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                                         int order) const {
  if (impl_->mode == Mode::vakonomic) throw Error("vakonomic problems are first order");
  const std::size_t m = base_dim();
  const std::size_t n = fiber_rank();
  if (static_cast<std::size_t>(x.size()) != m || static_cast<std::size_t>(y.size()) != n ||
      static_cast<std::size_t>(z.size()) != n) {
    throw DimensionError("(x, y, z) dimensions do not match the problem");
  }
  Eigen::VectorXd pt(x.size() + y.size() + z.size());
  pt << x, y, z;
  return impl_->full.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), order);
}

double pontryagin_hamiltonian(const SecondOrderProblem& prob, const PontryaginState& s) {
  if (prob.mode() == Mode::vakonomic) throw Error("use vakonomic_hamiltonian for vakonomic problems");
  if (prob.elimination() || static_cast<std::size_t>(s.z.size()) != prob.fiber_rank()) return prob.reduced().hamiltonian(s);
  const Derivatives d = prob.evaluate(s.x, s.y, s.z, 0);
  return s.pbar.dot(s.z) + s.p.dot(s.y) - d.value[0];
}

Eigen::MatrixXd presymplectic_matrix(const SecondOrderProblem& prob, const PontryaginState& s) {
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const ChartPoint cp = prob.chart().at(s.x);
  Eigen::MatrixXd om = Eigen::MatrixXd::Zero(5 * n, 5 * n);
  for (Eigen::Index a = 0; a < n; ++a) {
    om(a, 2 * n + a) = 1.0;
    om(2 * n + a, a) = -1.0;
    om(n + a, 3 * n + a) = 1.0;
    om(3 * n + a, n + a) = -1.0;
    for (Eigen::Index b = a + 1; b < n; ++b) {
      double v = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) v += cp.C(c, a, b) * s.p[c];
      om(a, b) = v;
      om(b, a) = -v;
    }
  }
  return om;
}

Eigen::VectorXd hamiltonian_differential(const SecondOrderProblem& prob, const PontryaginState& s) {
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const ChartPoint cp = prob.chart().at(s.x);
  const Derivatives d = prob.evaluate(s.x, s.y, s.z, 1);
  const Eigen::VectorXd g = d.jacobian.row(0).transpose();
  Eigen::VectorXd dh(5 * n);
  dh.segment(0, n) = -cp.rho.transpose() * g.head(m);
  dh.segment(n, n) = s.p - g.segment(m, n);
  dh.segment(2 * n, n) = s.y;
  dh.segment(3 * n, n) = s.z;
  dh.segment(4 * n, n) = s.pbar - g.segment(m + n, n);
  return dh;
}

namespace {

RegularityResult make_result(Eigen::MatrixXd M, double tol, std::string check) {
  RegularityResult r;
  r.matrix = std::move(M);
  r.check = std::move(check);
  if (r.matrix.size() == 0) {
    r.regular = true;
    return r;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r.matrix);
  const Eigen::VectorXd sv = svd.singularValues();
  r.min_singular_value = sv.minCoeff();
  r.condition = r.min_singular_value > 0.0 ? sv.maxCoeff() / r.min_singular_value : INFINITY;
  r.regular = r.min_singular_value > tol;
  return r;
}

Eigen::MatrixXd bordered_matrix(const SecondOrderProblem& prob, const Derivatives& d, const Eigen::VectorXd& lambda) {
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const auto q = static_cast<Eigen::Index>(prob.constraints().size());
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n + q, n + q);
  B.topLeftCorner(n, n) = d.hessian[0].block(m + n, m + n, n, n);
  for (Eigen::Index b = 0; b < q; ++b) {
    B.topLeftCorner(n, n) += lambda[b] * d.hessian[static_cast<std::size_t>(1 + b)].block(m + n, m + n, n, n);
    const Eigen::VectorXd phiz = d.jacobian.row(1 + b).segment(m + n, n).transpose();
    B.block(0, n + b, n, 1) = phiz;
    B.block(n + b, 0, 1, n) = phiz.transpose();
  }
  return B;
}

}  // namespace

RegularityResult regularity_test(const SecondOrderProblem& prob, const PontryaginState& s,
                                 const std::optional<Eigen::VectorXd>& multipliers, double tol) {
  switch (prob.mode()) {
    case Mode::vakonomic: {
      const auto& impl = prob.impl();
      VakonomicState v;
      v.x = s.x;
      v.p = s.p;
      v.y.resize(static_cast<Eigen::Index>(impl.vfree.size()));
      for (std::size_t a = 0; a < impl.vfree.size(); ++a) {
        v.y[static_cast<Eigen::Index>(a)] = s.y.size() == static_cast<Eigen::Index>(impl.vfree.size())
                                                ? s.y[static_cast<Eigen::Index>(a)]
                                                : s.y[static_cast<Eigen::Index>(impl.vfree[a])];
      }
      const auto m = static_cast<Eigen::Index>(prob.base_dim());
      const auto k = static_cast<Eigen::Index>(impl.vfree.size());
      Eigen::VectorXd pt(m + k);
      pt << v.x, v.y;
      const Derivatives d = impl.vak.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), 2);
      Eigen::MatrixXd M = d.hessian[0].block(m, m, k, k);
      for (std::size_t b = 0; b < impl.veliminated.size(); ++b) {
        M -= v.p[static_cast<Eigen::Index>(impl.veliminated[b])] * d.hessian[1 + b].block(m, m, k, k);
      }
      return make_result(M, tol, "vakonomic_velocity_hessian");
    }
    case Mode::constrained_multipliers:
      if (!multipliers && prob.elimination()) {
        return make_result(prob.reduced().regularity_matrix(s), tol, "reduced_acceleration_hessian");
      } else {
        const Eigen::VectorXd lambda =
            multipliers ? *multipliers : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.constraints().size()));
        if (lambda.size() != static_cast<Eigen::Index>(prob.constraints().size())) {
          throw DimensionError("need one multiplier per constraint");
        }
        const Derivatives d = prob.evaluate(s.x, s.y, s.z, 2);
        return make_result(bordered_matrix(prob, d, lambda), tol, "bordered_constraint_hessian");
      }
    case Mode::unconstrained:
      break;
  }
  if (prob.elimination()) return make_result(prob.reduced().regularity_matrix(s), tol, "reduced_acceleration_hessian");
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const Derivatives d = prob.evaluate(s.x, s.y, s.z, 2);
  return make_result(d.hessian[0].block(m + n, m + n, n, n), tol, "acceleration_hessian_on_primary_constraint");
}

PontryaginState optimality_field(const SecondOrderProblem& prob, const PontryaginState& s) {
  if (prob.mode() == Mode::vakonomic) throw Error("use vakonomic_field for vakonomic problems");
  return prob.reduced().field(s);
}

MultiplierRates multiplier_field(const SecondOrderProblem& prob, const PontryaginState& s, const Eigen::VectorXd& lambda) {
  if (prob.mode() != Mode::constrained_multipliers) throw Error("multiplier_field needs a constrained problem");
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const auto q = static_cast<Eigen::Index>(prob.constraints().size());
  if (lambda.size() != q) throw DimensionError("need one multiplier per constraint");
  const ChartPoint cp = prob.chart().at(s.x);
  const Derivatives d = prob.evaluate(s.x, s.y, s.z, 2);
  Eigen::VectorXd grad = d.jacobian.row(0).transpose();
  Eigen::MatrixXd hess = d.hessian[0];
  for (Eigen::Index b = 0; b < q; ++b) {
    grad += lambda[b] * d.jacobian.row(1 + b).transpose();
    hess += lambda[b] * d.hessian[static_cast<std::size_t>(1 + b)];
  }
  MultiplierRates out;
  auto& r = out.rates;
  r.x = cp.rho * s.y;
  r.y = s.z;
  r.p = cp.rho.transpose() * grad.head(m);
  for (Eigen::Index a = 0; a < n; ++a) r.p[a] -= bracket_term(cp.C, s.y, s.p, a);
  r.pbar = -s.p + grad.segment(m, n);

  const Eigen::MatrixXd B = bordered_matrix(prob, d, lambda);
  Eigen::VectorXd rhs(n + q);
  rhs.head(n) = r.pbar - hess.block(m + n, 0, n, m) * r.x - hess.block(m + n, m, n, n) * r.y;
  for (Eigen::Index b = 0; b < q; ++b) {
    rhs[n + b] = -(d.jacobian.row(1 + b).head(m).dot(r.x) + d.jacobian.row(1 + b).segment(m, n).dot(r.y));
  }
  const Eigen::VectorXd sol = solve_regular(B, rhs, "bordered constraint matrix");
  r.z = sol.head(n);
  out.lambda_dot = sol.tail(q);
  return out;
}

Eigen::VectorXd consistent_multipliers(const SecondOrderProblem& prob, const PontryaginState& s) {
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const auto q = static_cast<Eigen::Index>(prob.constraints().size());
  const Derivatives d = prob.evaluate(s.x, s.y, s.z, 1);
  Eigen::MatrixXd A(n, q);
  for (Eigen::Index b = 0; b < q; ++b) A.col(b) = d.jacobian.row(1 + b).segment(m + n, n).transpose();
  const Eigen::VectorXd r = s.pbar - d.jacobian.row(0).segment(m + n, n).transpose();
  return A.completeOrthogonalDecomposition().solve(r);
}

Eigen::VectorXd second_order_el_residual(const SecondOrderProblem& prob, const SecondOrderJet& jet) {
  if (prob.mode() == Mode::vakonomic) throw Error("second-order residual needs a second-order Lagrangian");
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  if (jet.x.size() != m || jet.y.size() != n || jet.y1.size() != n || jet.y2.size() != n || jet.y3.size() != n) {
    throw DimensionError("jet dimensions do not match the problem");
  }
  const ChartPoint cp = prob.chart().at(jet.x, 1);
  const Eigen::VectorXd xdot = cp.rho * jet.y;
  Eigen::VectorXd xddot = cp.rho * jet.y1;
  for (Eigen::Index j = 0; j < m; ++j) xddot += cp.drho[static_cast<std::size_t>(j)] * jet.y * xdot[j];

  Eigen::VectorXd pt(m + 2 * n), vel(m + 2 * n), acc(m + 2 * n);
  pt << jet.x, jet.y, jet.y1;
  vel << xdot, jet.y1, jet.y2;
  acc << xddot, jet.y2, jet.y3;
  const Derivatives d = prob.impl().el_parts.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), 2);
  auto first = [&](Eigen::Index r) { return d.jacobian.row(r).dot(vel); };
  auto second = [&](Eigen::Index r) { return vel.dot(d.hessian[static_cast<std::size_t>(r)] * vel) + d.jacobian.row(r).dot(acc); };

  Eigen::VectorXd lz_dot(n), ly(n), lx(m);
  for (Eigen::Index c = 0; c < n; ++c) {
    lz_dot[c] = first(c);
    ly[c] = d.value[n + c];
  }
  for (Eigen::Index i = 0; i < m; ++i) lx[i] = d.value[2 * n + i];
  Eigen::VectorXd r(n);
  for (Eigen::Index a = 0; a < n; ++a) {
    r[a] = second(a) + bracket_term(cp.C, jet.y, lz_dot, a) - first(n + a) - bracket_term(cp.C, jet.y, ly, a);
  }
  r += cp.rho.transpose() * lx;
  return r;
}

// ---- vakonomic ----

namespace {

struct VakEval {
  Eigen::VectorXd yfull;
  Derivatives d;
  ChartPoint cp;
};

VakEval vak_eval(const SecondOrderProblem& prob, const VakonomicState& s, int order) {
  if (prob.mode() != Mode::vakonomic) throw Error("problem is not in vakonomic mode");
  const auto& impl = prob.impl();
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const auto k = static_cast<Eigen::Index>(impl.vfree.size());
  if (s.x.size() != m || s.p.size() != n || s.y.size() != k) throw DimensionError("vakonomic state dimensions do not match");
  Eigen::VectorXd pt(m + k);
  pt << s.x, s.y;
  VakEval e;
  e.d = impl.vak.evaluate(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())), order);
  e.cp = prob.chart().at(s.x);
  e.yfull.resize(n);
  for (Eigen::Index a = 0; a < k; ++a) e.yfull[static_cast<Eigen::Index>(impl.vfree[static_cast<std::size_t>(a)])] = s.y[a];
  for (std::size_t b = 0; b < impl.veliminated.size(); ++b) {
    e.yfull[static_cast<Eigen::Index>(impl.veliminated[b])] = e.d.value[static_cast<Eigen::Index>(1 + b)];
  }
  return e;
}

}  // namespace

VakonomicState vakonomic_field(const SecondOrderProblem& prob, const VakonomicState& s) {
  const auto& impl = prob.impl();
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const auto k = static_cast<Eigen::Index>(impl.vfree.size());
  const VakEval e = vak_eval(prob, s, 2);
  // Effective function L~ - p_beta psi^beta and its derivatives over (x | y^a).
  Eigen::VectorXd grad = e.d.jacobian.row(0).transpose();
  Eigen::MatrixXd hess = e.d.hessian[0];
  for (std::size_t b = 0; b < impl.veliminated.size(); ++b) {
    const double pb = s.p[static_cast<Eigen::Index>(impl.veliminated[b])];
    grad -= pb * e.d.jacobian.row(static_cast<Eigen::Index>(1 + b)).transpose();
    hess -= pb * e.d.hessian[1 + b];
  }
  VakonomicState r;
  r.x = e.cp.rho * e.yfull;
  r.p = e.cp.rho.transpose() * grad.head(m);
  for (Eigen::Index a = 0; a < n; ++a) r.p[a] -= bracket_term(e.cp.C, e.yfull, s.p, a);
  Eigen::VectorXd rhs(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    rhs[a] = r.p[static_cast<Eigen::Index>(impl.vfree[static_cast<std::size_t>(a)])];
    for (std::size_t b = 0; b < impl.veliminated.size(); ++b) {
      rhs[a] += r.p[static_cast<Eigen::Index>(impl.veliminated[b])] * e.d.jacobian(static_cast<Eigen::Index>(1 + b), m + a);
    }
  }
  rhs -= hess.block(m, 0, k, m) * r.x;
  r.y = solve_regular(hess.block(m, m, k, k), rhs, "vakonomic velocity Hessian");
  return r;
}

double vakonomic_hamiltonian(const SecondOrderProblem& prob, const VakonomicState& s) {
  const auto& impl = prob.impl();
  const VakEval e = vak_eval(prob, s, 0);
  double h = -e.d.value[0];
  for (std::size_t a = 0; a < impl.vfree.size(); ++a) h += s.p[static_cast<Eigen::Index>(impl.vfree[a])] * s.y[static_cast<Eigen::Index>(a)];
  for (std::size_t b = 0; b < impl.veliminated.size(); ++b) {
    h += s.p[static_cast<Eigen::Index>(impl.veliminated[b])] * e.d.value[static_cast<Eigen::Index>(1 + b)];
  }
  return h;
}

Eigen::VectorXd vakonomic_constraint(const SecondOrderProblem& prob, const VakonomicState& s) {
  const auto& impl = prob.impl();
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto k = static_cast<Eigen::Index>(impl.vfree.size());
  const VakEval e = vak_eval(prob, s, 1);
  Eigen::VectorXd c(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    c[a] = s.p[static_cast<Eigen::Index>(impl.vfree[static_cast<std::size_t>(a)])] - e.d.jacobian(0, m + a);
    for (std::size_t b = 0; b < impl.veliminated.size(); ++b) {
      c[a] += s.p[static_cast<Eigen::Index>(impl.veliminated[b])] * e.d.jacobian(static_cast<Eigen::Index>(1 + b), m + a);
    }
  }
  return c;
}

// ---- affine elimination ----

namespace {

Expr determinant(const std::vector<std::vector<Expr>>& a) {
  const std::size_t n = a.size();
  if (n == 1) return a[0][0];
  if (n == 2) return a[0][0] * a[1][1] - a[0][1] * a[1][0];
  Expr det;
  for (std::size_t j = 0; j < n; ++j) {
    if (a[0][j].is_constant(0.0)) continue;
    std::vector<std::vector<Expr>> minor;
    for (std::size_t r = 1; r < n; ++r) {
      std::vector<Expr> row;
      for (std::size_t c = 0; c < n; ++c)
        if (c != j) row.push_back(a[r][c]);
      minor.push_back(row);
    }
    const Expr term = a[0][j] * determinant(minor);
    det = (j % 2 == 0) ? det + term : det - term;
  }
  return det;
}

}  // namespace

Elimination solve_affine(const std::vector<Expr>& constraints, const std::vector<std::size_t>& indices, std::size_t n) {
  check_indices(indices, n);
  const std::size_t q = indices.size();
  if (constraints.size() != q) throw Error("need as many constraints as eliminated accelerations");
  std::vector<std::string> zn;
  for (auto a : indices) zn.push_back(coordinate_name("z", a));
  std::map<std::string, Expr> zero;
  for (const auto& name : zn) zero[name] = Expr();

  std::vector<std::vector<Expr>> W(q, std::vector<Expr>(q));
  std::vector<Expr> r(q);
  bool constant = true;
  for (std::size_t i = 0; i < q; ++i) {
    r[i] = substitute(constraints[i], zero);
    for (std::size_t j = 0; j < q; ++j) {
      W[i][j] = differentiate(constraints[i], zn[j]);
      for (const auto& name : zn) {
        const Expr dd = differentiate(W[i][j], name);
        if (!dd.is_constant(0.0)) throw Error("constraints are not affine in the eliminated accelerations");
      }
      constant = constant && W[i][j].is_constant();
    }
  }
  Elimination el;
  el.constrained = indices;
  el.psi.assign(q, Expr());
  if (constant) {
    Eigen::MatrixXd Wn(q, q);
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t j = 0; j < q; ++j) Wn(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = W[i][j].value();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Wn);
    if (!lu.isInvertible()) throw RegularityError("constraint matrix dPhi/dz^alpha is singular", Wn);
    const Eigen::MatrixXd inv = lu.inverse();
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t j = 0; j < q; ++j) {
        const double c = inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (c != 0.0) el.psi[i] -= Expr(c) * r[j];
      }
    return el;
  }
  if (q > 4) throw Error("symbolic elimination supports at most 4 state-dependent constraints");
  const Expr det = determinant(W);
  for (std::size_t i = 0; i < q; ++i) {
    Expr num;
    for (std::size_t j = 0; j < q; ++j) {
      // inverse(i, j) = cofactor(j, i) / det
      Expr cof;
      if (q == 1) {
        cof = Expr(1.0);
      } else {
        std::vector<std::vector<Expr>> minor;
        for (std::size_t rr = 0; rr < q; ++rr) {
          if (rr == j) continue;
          std::vector<Expr> row;
          for (std::size_t cc = 0; cc < q; ++cc)
            if (cc != i) row.push_back(W[rr][cc]);
          minor.push_back(row);
        }
        cof = determinant(minor);
        if ((i + j) % 2 == 1) cof = -cof;
      }
      num += cof * r[j];
    }
    el.psi[i] = -num / det;
  }
  return el;
}

}  // namespace algmech
