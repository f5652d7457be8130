#include "algmech/ocp.hpp"

#include "algmech/error.hpp"
#include "algmech/mechanics.hpp"

#include <algorithm>
#include <map>

namespace algmech {

std::vector<std::size_t> ControlProblem::unactuated() const {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < chart.fiber_rank(); ++a)
    if (std::find(actuation.begin(), actuation.end(), a) == actuation.end()) out.push_back(a);
  return out;
}

void check_control_problem(const ControlProblem& cp) {
  const std::size_t n = cp.chart.fiber_rank();
  std::vector<std::size_t> sorted = cp.actuation;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw Error("actuation indices must be distinct");
  for (auto a : cp.actuation)
    if (a >= n) throw Error("actuation index out of range");
  VariableLayout xy{{"x", cp.chart.base_dim()}, {"y", n}};
  require_variables(cp.lagrangian, xy, "mechanical Lagrangian");
  VariableLayout xyu{{"x", cp.chart.base_dim()}, {"y", n}, {"u", cp.actuation.size()}};
  require_variables(cp.cost, xyu, "cost (only x, y and the actuated controls u1..uk may appear)");
}

namespace {

Expr substituted_cost(const ControlProblem& cp, const std::vector<Expr>& F) {
  std::map<std::string, Expr> sub;
  for (std::size_t i = 0; i < cp.actuation.size(); ++i) sub[coordinate_name("u", i)] = F[cp.actuation[i]];
  return substitute(cp.cost, sub);
}

}  // namespace

SecondOrderProblem build_fully_actuated(const ControlProblem& cp) {
  check_control_problem(cp);
  if (!cp.fully_actuated()) throw Error("fully actuated construction needs one control per fiber direction");
  const std::vector<Expr> F = el_operator(cp.chart, cp.lagrangian);
  return SecondOrderProblem(cp.chart, substituted_cost(cp, F));
}

ReducedUnderactuatedProblem build_underactuated(const ControlProblem& cp) {
  check_control_problem(cp);
  if (cp.fully_actuated()) throw Error("underactuated construction needs fewer controls than fiber directions");
  const std::size_t n = cp.chart.fiber_rank();
  const std::vector<Expr> F = el_operator(cp.chart, cp.lagrangian);
  const std::vector<std::size_t> unact = cp.unactuated();
  std::vector<Expr> phi;
  for (auto a : unact) phi.push_back(F[a]);

  const auto z = coordinates("z", n);
  std::vector<std::vector<Expr>> W;
  for (std::size_t i = 0; i < unact.size(); ++i) {
    std::vector<Expr> row;
    for (auto b : unact) row.push_back(differentiate(phi[i], z[b].name()));
    W.push_back(row);
  }
  Elimination el = solve_affine(phi, unact, n);
  std::vector<Expr> G = el.psi;
  SecondOrderProblem prob(cp.chart, substituted_cost(cp, F), phi, Mode::constrained_multipliers, std::move(el));
  Expr reduced = prob.reduced().lagrangian();
  return ReducedUnderactuatedProblem{std::move(prob), std::move(G), std::move(reduced), std::move(W)};
}

PontryaginState underactuated_optimality_field(const ReducedUnderactuatedProblem& red, const PontryaginState& s) {
  return red.system().field(s);
}

ControlReconstruction::ControlReconstruction(const ControlProblem& cp) {
  check_control_problem(cp);
  const std::vector<Expr> F = el_operator(cp.chart, cp.lagrangian);
  std::vector<Expr> outputs;
  for (auto a : cp.actuation) outputs.push_back(F[a]);
  const std::size_t n = cp.chart.fiber_rank();
  f_ = CompiledExprs(outputs, VariableLayout{{"x", cp.chart.base_dim()}, {"y", n}, {"z", n}});
}

Eigen::VectorXd ControlReconstruction::operator()(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                                  const Eigen::VectorXd& z) const {
  Eigen::VectorXd pt(x.size() + y.size() + z.size());
  pt << x, y, z;
  if (static_cast<std::size_t>(pt.size()) != f_.num_inputs()) throw DimensionError("(x, y, z) dimensions do not match");
  return f_.values(std::span<const double>(pt.data(), static_cast<std::size_t>(pt.size())));
}

namespace {

Eigen::VectorXd free_part(const ReducedSystem& sys, const Eigen::VectorXd& z) {
  const auto k = static_cast<Eigen::Index>(sys.free_count());
  const auto n = static_cast<Eigen::Index>(sys.chart().fiber_rank());
  if (z.size() == k) return z;
  if (z.size() != n) throw DimensionError("z boundary value has the wrong length");
  Eigen::VectorXd out(k);
  for (Eigen::Index a = 0; a < k; ++a) out[a] = z[static_cast<Eigen::Index>(sys.free_indices()[static_cast<std::size_t>(a)])];
  return out;
}

}  // namespace

ShootingProblem optimality_shooting(const ReducedSystem& sys, const Boundary& b) {
  const std::size_t m = sys.chart().base_dim();
  const std::size_t n = sys.chart().fiber_rank();
  const std::size_t k = sys.free_count();
  const std::size_t q = sys.eliminated_indices().size();
  if (static_cast<std::size_t>(b.x0.size()) != m || static_cast<std::size_t>(b.xT.size()) != m ||
      static_cast<std::size_t>(b.y0.size()) != n || static_cast<std::size_t>(b.yT.size()) != n) {
    throw DimensionError("boundary dimensions do not match the problem");
  }
  const std::optional<Eigen::VectorXd> z0 = b.z0 ? std::optional(free_part(sys, *b.z0)) : std::nullopt;
  const std::optional<Eigen::VectorXd> zT = b.zT ? std::optional(free_part(sys, *b.zT)) : std::nullopt;

  ShootingProblem sp;
  sp.T = b.T;
  sp.unknown_count = (z0 ? 0 : k) + n + q;
  sp.field = [sys, m, n, k](double, const Eigen::VectorXd& v) {
    return sys.field(PontryaginState::unflatten(v, m, n, k)).flatten();
  };
  sp.initial_state = [sys, b, z0, n, k, q](const Eigen::VectorXd& u) {
    PontryaginState s;
    s.x = b.x0;
    s.y = b.y0;
    Eigen::Index at = 0;
    if (z0) {
      s.z = *z0;
    } else {
      s.z = u.segment(0, static_cast<Eigen::Index>(k));
      at += static_cast<Eigen::Index>(k);
    }
    s.p = u.segment(at, static_cast<Eigen::Index>(n));
    at += static_cast<Eigen::Index>(n);
    s.pbar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < q; ++j) s.pbar[static_cast<Eigen::Index>(sys.eliminated_indices()[j])] = u[at + static_cast<Eigen::Index>(j)];
    return sys.project_to_primary(s).flatten();
  };
  sp.residual = [b, zT, m, n, k](const Eigen::VectorXd& v) {
    const PontryaginState s = PontryaginState::unflatten(v, m, n, k);
    Eigen::VectorXd r(static_cast<Eigen::Index>(m + n + (zT ? k : 0)));
    r << s.x - b.xT, s.y - b.yT;
    if (zT) r.tail(static_cast<Eigen::Index>(k)) = s.z - *zT;
    return r;
  };
  if (m + n + (zT ? k : 0) != sp.unknown_count) {
    throw DimensionError("boundary data give " + std::to_string(m + n + (zT ? k : 0)) + " conditions for " +
                         std::to_string(sp.unknown_count) + " unknowns; the shooting system must be square");
  }
  return sp;
}

Eigen::VectorXd shooting_unknowns(const ReducedSystem& sys, const Boundary& b, const PontryaginState& s0) {
  const std::size_t n = sys.chart().fiber_rank();
  const std::size_t k = sys.free_count();
  const std::size_t q = sys.eliminated_indices().size();
  Eigen::VectorXd u((b.z0 ? 0 : k) + n + q);
  Eigen::Index at = 0;
  if (!b.z0) {
    u.head(static_cast<Eigen::Index>(k)) = free_part(sys, s0.z);
    at += static_cast<Eigen::Index>(k);
  }
  u.segment(at, static_cast<Eigen::Index>(n)) = s0.p;
  at += static_cast<Eigen::Index>(n);
  for (std::size_t j = 0; j < q; ++j) u[at + static_cast<Eigen::Index>(j)] = s0.pbar[static_cast<Eigen::Index>(sys.eliminated_indices()[j])];
  return u;
}

}  // namespace algmech
