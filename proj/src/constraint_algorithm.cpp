#include "algmech/error.hpp"
#include "algmech/linalg.hpp"
#include "algmech/sorusk.hpp"

#include <cmath>

namespace algmech {

namespace {

constexpr double kRrefTol = 1e-10;

Derivatives eval_first(const CompiledExprs& c, const Eigen::VectorXd& w) {
  return c.evaluate(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())), 1);
}

// Minimum-norm Newton projection onto the common zero set of the constraints.
double project(const CompiledExprs& c, Eigen::VectorXd& w, double tol) {
  if (c.num_outputs() == 0) return 0.0;
  double res = INFINITY;
  for (int it = 0; it < 50; ++it) {
    const Derivatives d = eval_first(c, w);
    res = d.value.lpNorm<Eigen::Infinity>();
    if (res < 1e-13 * std::max(1.0, w.lpNorm<Eigen::Infinity>())) break;
    w -= d.jacobian.completeOrthogonalDecomposition().solve(d.value);
  }
  if (res > tol) throw ConvergenceError("could not project onto the constraint set");
  return res;
}

Expr combine(const Eigen::VectorXd& coeffs, const std::vector<Expr>& exprs) {
  Expr e;
  for (Eigen::Index r = 0; r < coeffs.size(); ++r) {
    const double c = coeffs[r];
    if (c == 0.0) continue;
    const Expr& t = exprs[static_cast<std::size_t>(r)];
    if (c == 1.0) e += t;
    else if (c == -1.0) e -= t;
    else e += Expr(c) * t;
  }
  return e;
}

}  // namespace

std::size_t ConstraintChainReport::nontrivial_levels() const {
  std::size_t k = 0;
  for (const auto& l : levels)
    if (!l.new_constraints.empty()) ++k;
  return k;
}

ConstraintStep constraint_step(const Eigen::MatrixXd& omega, const Eigen::VectorXd& dH, const Eigen::MatrixXd& tangent_basis,
                               double tol) {
  const Eigen::Index r = omega.rows();
  if (omega.cols() != r || dH.size() != r || tangent_basis.rows() != r) throw DimensionError("constraint step dimensions");
  ConstraintStep s;
  if (tangent_basis.cols() == 0) {
    s.orthogonal = Eigen::MatrixXd::Identity(r, r);
  } else {
    const Eigen::MatrixXd ns = null_space((omega * tangent_basis).transpose(), tol);
    s.orthogonal = ns.cols() == 0 ? ns : canonical_basis(ns, kRrefTol);
  }
  s.kernel_dim = static_cast<std::size_t>(s.orthogonal.cols());
  s.values = s.orthogonal.transpose() * dH;
  s.solvable = s.values.size() == 0 || s.values.lpNorm<Eigen::Infinity>() < tol;
  return s;
}

ConstraintChainReport run_constraint_algorithm(const PresymplecticSystem& system, const Eigen::VectorXd& w0,
                                               std::size_t max_levels, double tol) {
  const auto d = static_cast<Eigen::Index>(system.layout.size());
  if (w0.size() != d) throw DimensionError("initial point does not match the layout");
  const auto r = static_cast<Eigen::Index>(system.dH.size());
  const CompiledExprs dh(system.dH, system.layout);

  ConstraintChainReport report;
  report.constraints = system.initial_constraints;
  Eigen::VectorXd w = w0;
  for (std::size_t level = 0; level < max_levels; ++level) {
    ConstraintLevel lv;
    lv.level = level;
    const CompiledExprs cons(report.constraints, system.layout);
    lv.projection_residual = project(cons, w, std::sqrt(tol));
    const Eigen::MatrixXd R = system.anchor(w);
    Eigen::MatrixXd F;
    Eigen::Index rankJ = 0;
    if (report.constraints.empty()) {
      F = Eigen::MatrixXd::Identity(r, r);
    } else {
      const Eigen::MatrixXd J = eval_first(cons, w).jacobian;
      rankJ = numerical_rank(J, tol);
      F = null_space(J * R, tol);
    }
    lv.manifold_dim = static_cast<std::size_t>(d - rankJ);

    const Derivatives dhv = eval_first(dh, w);
    const ConstraintStep step = constraint_step(system.omega(w), dhv.value, F, tol);
    lv.kernel_dim = step.kernel_dim;
    const Eigen::MatrixXd& K = step.orthogonal;
    for (Eigen::Index j = 0; j < K.cols(); ++j) lv.candidates.push_back(combine(K.col(j), system.dH));
    lv.candidate_values = step.values;

    const Eigen::MatrixXd diffs = K.transpose() * dhv.jacobian * R * F;
    Eigen::MatrixXd G(K.cols(), 1 + diffs.cols());
    G << step.values, diffs;
    const Eigen::Index rankG = K.cols() == 0 ? 0 : numerical_rank(G, tol);
    if (rankG == 0) {
      lv.stabilized = true;
      report.levels.push_back(std::move(lv));
      report.stabilized = true;
      return report;
    }
    const Eigen::Index rankD = diffs.size() == 0 ? 0 : numerical_rank(diffs, tol);
    if (rankD < rankG) {
      report.consistent = false;
      report.note = "a consistency condition has nonzero value and vanishing differential; the system has no solutions here";
      report.levels.push_back(std::move(lv));
      return report;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeFullU);
    const Eigen::MatrixXd combos = rref(svd.matrixU().leftCols(rankG).transpose(), kRrefTol);
    for (Eigen::Index i = 0; i < combos.rows(); ++i) {
      const Expr c = combine(combos.row(i).transpose(), lv.candidates);
      lv.new_constraints.push_back(c);
      report.constraints.push_back(c);
    }
    report.levels.push_back(std::move(lv));
  }
  report.note = "level limit reached before the chain stabilized";
  return report;
}

PresymplecticSystem presymplectic_system(const SecondOrderProblem& prob) {
  if (prob.mode() == Mode::vakonomic) throw Error("the constraint algorithm runs on second-order problems");
  const AlgebroidChart chart = prob.chart();
  const std::size_t m = chart.base_dim();
  const std::size_t n = chart.fiber_rank();
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  PresymplecticSystem sys;
  sys.layout = VariableLayout{{"x", m}, {"y", n}, {"z", n}, {"p", n}, {"pbar", n}};
  const auto x = coordinates("x", m);
  const auto y = coordinates("y", n);
  const auto z = coordinates("z", n);
  const auto p = coordinates("p", n);
  const auto pbar = coordinates("pbar", n);
  const Expr& L = prob.lagrangian();

  sys.dH.assign(5 * n, Expr());
  for (std::size_t a = 0; a < n; ++a) {
    Expr e11;
    for (std::size_t i = 0; i < m; ++i) {
      if (!chart.anchor(i, a).is_constant(0.0)) e11 -= chart.anchor(i, a) * differentiate(L, x[i].name());
    }
    sys.dH[a] = e11;
    sys.dH[n + a] = p[a] - differentiate(L, y[a].name());
    sys.dH[2 * n + a] = y[a];
    sys.dH[3 * n + a] = z[a];
    sys.dH[4 * n + a] = pbar[a] - differentiate(L, z[a].name());
  }
  if (prob.mode() == Mode::constrained_multipliers) sys.initial_constraints = prob.constraints();

  sys.omega = [chart, M, N](const Eigen::VectorXd& w) {
    PontryaginState s;
    s.x = w.head(M);
    s.p = w.segment(M + 2 * N, N);
    const ChartPoint cp = chart.at(s.x);
    Eigen::MatrixXd om = Eigen::MatrixXd::Zero(5 * N, 5 * N);
    for (Eigen::Index a = 0; a < N; ++a) {
      om(a, 2 * N + a) = 1.0;
      om(2 * N + a, a) = -1.0;
      om(N + a, 3 * N + a) = 1.0;
      om(3 * N + a, N + a) = -1.0;
      for (Eigen::Index b = a + 1; b < N; ++b) {
        double v = 0.0;
        for (Eigen::Index c = 0; c < N; ++c) v += cp.C(c, a, b) * s.p[c];
        om(a, b) = v;
        om(b, a) = -v;
      }
    }
    return om;
  };
  sys.anchor = [chart, M, N](const Eigen::VectorXd& w) {
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(M + 4 * N, 5 * N);
    R.block(0, 0, M, N) = chart.anchor_at(w.head(M));
    for (Eigen::Index a = 0; a < N; ++a) {
      R(M + a, N + a) = 1.0;              // e21 -> y
      R(M + 2 * N + a, 2 * N + a) = 1.0;  // e12 -> p
      R(M + 3 * N + a, 3 * N + a) = 1.0;  // e22 -> pbar
      R(M + N + a, 4 * N + a) = 1.0;      // ez -> z
    }
    return R;
  };
  return sys;
}

ConstraintChainReport run_constraint_algorithm(const SecondOrderProblem& prob, const PontryaginState& s,
                                               std::size_t max_levels, double tol) {
  const std::size_t n = prob.fiber_rank();
  if (static_cast<std::size_t>(s.z.size()) != n) throw DimensionError("the constraint algorithm needs all n accelerations");
  return run_constraint_algorithm(presymplectic_system(prob), s.flatten(), max_levels, tol);
}

}  // namespace algmech
