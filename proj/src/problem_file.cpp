#include "algmech/problem_file.hpp"

#include "algmech/error.hpp"
#include "algmech/mechanics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace algmech {

using json = nlohmann::json;
namespace fs = std::filesystem;

Method SolverSettings::integrator() const {
  if (method == "rk45") return Rk45{rtol, atol};
  return Rk4{h};
}

const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes{"validate",  "simulate-el", "simulate-hamilton", "second-order",
                                              "vakonomic", "solve-ocp",   "constraint-chain"};
  return modes;
}

namespace {

// ---- schema helpers ----

std::string at(const std::string& ptr, const std::string& key) { return ptr + "/" + key; }
std::string at(const std::string& ptr, std::size_t i) { return ptr + "/" + std::to_string(i); }

const json& member(const json& obj, const std::string& key, const std::string& ptr) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(at(ptr, key), "required field is missing");
  return obj[key];
}

double number(const json& node, const std::string& ptr) {
  if (!node.is_number()) throw SchemaError(ptr, "must be a number");
  return node.get<double>();
}

std::size_t count(const json& node, const std::string& ptr) {
  if (!node.is_number_integer() || node.get<long long>() < 0) throw SchemaError(ptr, "must be a non-negative integer");
  return static_cast<std::size_t>(node.get<long long>());
}

Eigen::VectorXd vector(const json& node, const std::string& ptr, std::size_t size) {
  if (!node.is_array()) throw SchemaError(ptr, "must be a list of numbers");
  if (node.size() != size) throw SchemaError(ptr, "needs " + std::to_string(size) + " entries, found " + std::to_string(node.size()));
  Eigen::VectorXd v(static_cast<Eigen::Index>(size));
  for (std::size_t i = 0; i < size; ++i) v[static_cast<Eigen::Index>(i)] = number(node[i], at(ptr, i));
  return v;
}

Expr expression(const json& node, const std::string& ptr, const Declarations& decl) {
  if (node.is_number()) return Expr(node.get<double>());
  if (!node.is_string()) throw SchemaError(ptr, "must be an expression string");
  try {
    return parse(node.get<std::string>(), decl);
  } catch (const ParseError& e) {
    throw SchemaError(ptr, e.what());
  }
}

std::vector<Expr> expression_list(const json& node, const std::string& ptr, const Declarations& decl) {
  if (!node.is_array()) throw SchemaError(ptr, "must be a list of expression strings");
  std::vector<Expr> out;
  for (std::size_t i = 0; i < node.size(); ++i) out.push_back(expression(node[i], at(ptr, i), decl));
  return out;
}

std::vector<std::size_t> indices(const json& node, const std::string& ptr, std::size_t n) {
  if (!node.is_array()) throw SchemaError(ptr, "must be a list of 1-based fiber indices");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::size_t v = count(node[i], at(ptr, i));
    if (v < 1 || v > n) throw SchemaError(at(ptr, i), "index out of range 1.." + std::to_string(n));
    if (std::find(out.begin(), out.end(), v - 1) != out.end()) throw SchemaError(at(ptr, i), "repeated index");
    out.push_back(v - 1);
  }
  return out;
}

Declarations with(const Declarations& base, std::initializer_list<std::pair<const char*, std::size_t>> blocks) {
  Declarations d = base;
  for (const auto& [name, size] : blocks) d.block(name, size);
  return d;
}

AlgebroidChart custom_chart(const json& c, const std::string& ptr, const Declarations& params) {
  const std::size_t m = count(member(c, "m", ptr), at(ptr, "m"));
  const std::size_t n = count(member(c, "n", ptr), at(ptr, "n"));
  const Declarations decl = with(params, {{"x", m}});
  const json& rho = member(c, "rho", ptr);
  const std::string rp = at(ptr, "rho");
  if (!rho.is_array() || rho.size() != m) throw SchemaError(rp, "needs " + std::to_string(m) + " rows");
  std::vector<Expr> anchor;
  for (std::size_t i = 0; i < m; ++i) {
    if (!rho[i].is_array() || rho[i].size() != n) throw SchemaError(at(rp, i), "needs " + std::to_string(n) + " entries");
    for (std::size_t a = 0; a < n; ++a) anchor.push_back(expression(rho[i][a], at(at(rp, i), a), decl));
  }
  StructureTable table(n);
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::pair<Expr, std::size_t>> seen;
  const std::string cp = at(ptr, "C");
  const json list = c.value("C", json::array());
  if (!list.is_array()) throw SchemaError(cp, "must be a list of entries");
  for (std::size_t k = 0; k < list.size(); ++k) {
    const json& e = list[k];
    const std::string ep = at(cp, k);
    auto idx = [&](const char* key) {
      const std::size_t v = count(member(e, key, ep), at(ep, key));
      if (v < 1 || v > n) throw SchemaError(at(ep, key), "index out of range 1.." + std::to_string(n));
      return v - 1;
    };
    const std::size_t a = idx("A");
    const std::size_t b = idx("B");
    const std::size_t ci = idx(e.contains("C_index") ? "C_index" : "C");
    const Expr value = expression(e.contains("expr") ? e["expr"] : member(e, "value", ep), ep, decl);
    if (a == b) {
      if (!value.is_constant(0.0)) throw SchemaError(ep, "C^C_{AA} must vanish by antisymmetry");
      continue;
    }
    const Expr oriented = a < b ? value : -value;
    const auto key = std::make_tuple(std::min(a, b), std::max(a, b), ci);
    if (const auto it = seen.find(key); it != seen.end()) {
      const Expr& prev = it->second.first;
      const bool same = structurally_equal(prev, oriented) ||
                        (prev.is_constant() && oriented.is_constant() &&
                         std::abs(prev.value() - oriented.value()) <= 1e-15 * std::max(1.0, std::abs(prev.value())));
      if (!same) {
        throw SchemaError(ep, "contradicts entry " + std::to_string(it->second.second) + ": C^C_{AB} must equal -C^C_{BA}");
      }
      continue;
    }
    seen.emplace(key, std::make_pair(oriented, k));
    table.set(ci, a, b, value);
  }
  return AlgebroidChart(c.value("name", std::string("custom")), m, n, std::move(anchor), std::move(table));
}

bool second_order_mode(const std::string& mode) {
  return mode == "second-order" || mode == "solve-ocp" || mode == "constraint-chain";
}

}  // namespace

ProblemFile parse_problem(const json& doc) {
  if (!doc.is_object()) throw SchemaError("", "problem file must be a JSON object");
  ProblemFile pf;
  pf.document = doc;
  const json& mode = member(doc, "mode", "");
  if (!mode.is_string()) throw SchemaError("/mode", "must be a string");
  pf.mode = mode.get<std::string>();
  const auto& modes = known_modes();
  if (std::find(modes.begin(), modes.end(), pf.mode) == modes.end()) throw SchemaError("/mode", "unknown mode '" + pf.mode + "'");

  Declarations params;
  if (doc.contains("parameters")) {
    const json& p = doc["parameters"];
    if (!p.is_object()) throw SchemaError("/parameters", "must be an object of numbers");
    for (const auto& [k, v] : p.items()) params.parameter(k, number(v, "/parameters/" + k));
  }

  const json& alg = member(doc, "algebroid", "");
  if (!alg.is_object() || alg.contains("builtin") == alg.contains("custom")) {
    throw SchemaError("/algebroid", "needs exactly one of 'builtin' or 'custom'");
  }
  if (alg.contains("builtin")) {
    const json& b = alg["builtin"];
    const json& name = member(b, "name", "/algebroid/builtin");
    if (!name.is_string()) throw SchemaError("/algebroid/builtin/name", "must be a string");
    try {
      pf.chart = builtin_chart(name.get<std::string>(), b.value("params", json::object()));
    } catch (const SchemaError&) {
      throw;
    } catch (const Error& e) {
      throw SchemaError("/algebroid/builtin/params", e.what());
    }
  } else {
    try {
      pf.chart = custom_chart(alg["custom"], "/algebroid/custom", params);
    } catch (const SchemaError&) {
      throw;
    } catch (const Error& e) {
      throw SchemaError("/algebroid/custom", e.what());
    }
  }
  const std::size_t m = pf.m();
  const std::size_t n = pf.n();

  const bool second = second_order_mode(pf.mode);
  if (doc.contains("actuation")) pf.actuation = indices(doc["actuation"], "/actuation", n);
  if (doc.contains("cost")) {
    if (!pf.actuation) {
      std::vector<std::size_t> all(n);
      for (std::size_t a = 0; a < n; ++a) all[a] = a;
      pf.actuation = all;
    }
    pf.cost = expression(doc["cost"], "/cost", with(params, {{"x", m}, {"y", n}, {"u", pf.actuation->size()}}));
  }
  const bool lagrangian_has_z = second && !pf.cost;
  if (doc.contains("lagrangian")) {
    pf.lagrangian = expression(doc["lagrangian"], "/lagrangian",
                               lagrangian_has_z ? with(params, {{"x", m}, {"y", n}, {"z", n}}) : with(params, {{"x", m}, {"y", n}}));
  }
  if (doc.contains("hamiltonian")) pf.hamiltonian = expression(doc["hamiltonian"], "/hamiltonian", with(params, {{"x", m}, {"p", n}}));
  if (doc.contains("force")) {
    Declarations d = with(params, {{"x", m}, {"y", n}});
    d.variables.insert("t");
    pf.force = expression_list(doc["force"], "/force", d);
    if (pf.force.size() != n) throw SchemaError("/force", "needs one component per fiber direction");
  }
  const Declarations cdecl = pf.mode == "vakonomic" ? with(params, {{"x", m}, {"y", n}}) : with(params, {{"x", m}, {"y", n}, {"z", n}});
  if (doc.contains("constraints")) pf.constraints = expression_list(doc["constraints"], "/constraints", cdecl);
  if (doc.contains("elimination")) {
    const json& e = doc["elimination"];
    Elimination el;
    el.constrained = indices(member(e, "indices", "/elimination"), "/elimination/indices", n);
    if (e.contains("psi")) {
      el.psi = expression_list(e["psi"], "/elimination/psi", cdecl);
      if (el.psi.size() != el.constrained.size()) throw SchemaError("/elimination/psi", "needs one expression per index");
    } else {
      if (pf.mode == "vakonomic") throw SchemaError("/elimination/psi", "vakonomic mode needs explicit expressions");
      if (pf.constraints.size() != el.constrained.size()) {
        throw SchemaError("/elimination/indices", "needs one index per constraint");
      }
      try {
        el = solve_affine(pf.constraints, el.constrained, n);
      } catch (const Error& ex) {
        throw SchemaError("/elimination", ex.what());
      }
    }
    pf.elimination = el;
  }

  if (doc.contains("boundary")) {
    const json& b = doc["boundary"];
    const std::string bp = "/boundary";
    Boundary bd;
    bd.x0 = vector(member(b, "x0", bp), at(bp, "x0"), m);
    bd.y0 = vector(member(b, "y0", bp), at(bp, "y0"), n);
    bd.xT = vector(member(b, "xT", bp), at(bp, "xT"), m);
    bd.yT = vector(member(b, "yT", bp), at(bp, "yT"), n);
    if (b.contains("z0")) bd.z0 = vector(b["z0"], at(bp, "z0"), n);
    if (b.contains("zT")) bd.zT = vector(b["zT"], at(bp, "zT"), n);
    bd.T = number(member(b, "T", bp), at(bp, "T"));
    if (!(bd.T > 0.0)) throw SchemaError(at(bp, "T"), "horizon must be positive");
    pf.boundary = bd;
    pf.T = bd.T;
  }
  if (doc.contains("initial")) {
    const json& i = doc["initial"];
    const std::string ip = "/initial";
    if (!i.is_object()) throw SchemaError(ip, "must be an object");
    if (i.contains("x0")) pf.initial.x0 = vector(i["x0"], at(ip, "x0"), m);
    if (i.contains("y0")) {
      std::size_t size = n;
      if (pf.mode == "vakonomic" && pf.elimination && i["y0"].is_array() && i["y0"].size() != n) {
        size = n - pf.elimination->constrained.size();
      }
      pf.initial.y0 = vector(i["y0"], at(ip, "y0"), size);
    }
    if (i.contains("z0")) pf.initial.z0 = vector(i["z0"], at(ip, "z0"), n);
    if (i.contains("p0")) pf.initial.p0 = vector(i["p0"], at(ip, "p0"), n);
    if (i.contains("pbar0")) pf.initial.pbar0 = vector(i["pbar0"], at(ip, "pbar0"), n);
    if (i.contains("T")) {
      pf.T = number(i["T"], at(ip, "T"));
      if (!(pf.T > 0.0)) throw SchemaError(at(ip, "T"), "horizon must be positive");
    }
  }
  if (doc.contains("guess")) {
    const json& g = doc["guess"];
    if (!g.is_array()) throw SchemaError("/guess", "must be a list of numbers");
    pf.guess = vector(g, "/guess", g.size());
  }
  if (doc.contains("solver")) {
    const json& s = doc["solver"];
    const std::string sp = "/solver";
    if (!s.is_object()) throw SchemaError(sp, "must be an object");
    if (s.contains("method")) {
      if (!s["method"].is_string()) throw SchemaError(at(sp, "method"), "must be \"rk4\" or \"rk45\"");
      pf.solver.method = s["method"].get<std::string>();
      if (pf.solver.method != "rk4" && pf.solver.method != "rk45") throw SchemaError(at(sp, "method"), "must be \"rk4\" or \"rk45\"");
    }
    auto positive = [&](const char* key, double& out) {
      if (!s.contains(key)) return;
      out = number(s[key], at(sp, key));
      if (!(out > 0.0)) throw SchemaError(at(sp, key), "must be positive");
    };
    positive("h", pf.solver.h);
    positive("rtol", pf.solver.rtol);
    positive("atol", pf.solver.atol);
    positive("newton_tol", pf.solver.newton_tol);
    if (s.contains("max_iter")) pf.solver.max_iter = count(s["max_iter"], at(sp, "max_iter"));
    if (s.contains("segments")) pf.solver.segments = std::max<std::size_t>(1, count(s["segments"], at(sp, "segments")));
    if (s.contains("max_levels")) pf.solver.max_levels = count(s["max_levels"], at(sp, "max_levels"));
  }
  if (doc.contains("validation")) {
    const json& v = doc["validation"];
    const std::string vp = "/validation";
    if (v.contains("samples")) pf.validation.samples = count(v["samples"], at(vp, "samples"));
    if (v.contains("box")) {
      const Eigen::VectorXd box = vector(v["box"], at(vp, "box"), 2);
      pf.validation.lo = box[0];
      pf.validation.hi = box[1];
      if (!(box[0] < box[1])) throw SchemaError(at(vp, "box"), "needs lo < hi");
    }
    if (v.contains("tol")) pf.validation.tol = number(v["tol"], at(vp, "tol"));
  }

  // Per-mode requirements.
  auto need = [&](bool ok, const std::string& ptr, const std::string& what) {
    if (!ok) throw SchemaError(ptr, what);
  };
  if (pf.mode == "simulate-el") {
    need(pf.lagrangian.has_value(), "/lagrangian", "simulate-el needs a Lagrangian");
    need(pf.initial.x0 && pf.initial.y0, "/initial", "simulate-el needs x0 and y0");
  } else if (pf.mode == "simulate-hamilton") {
    need(pf.hamiltonian.has_value(), "/hamiltonian", "simulate-hamilton needs a Hamiltonian");
    need(pf.initial.x0 && pf.initial.p0, "/initial", "simulate-hamilton needs x0 and p0");
  } else if (pf.mode == "vakonomic") {
    need(pf.lagrangian.has_value(), "/lagrangian", "vakonomic mode needs a Lagrangian");
    need(pf.elimination.has_value(), "/elimination", "vakonomic mode needs the constrained velocities eliminated");
    need(pf.initial.x0 && pf.initial.y0 && pf.initial.p0, "/initial", "vakonomic mode needs x0, y0 and p0");
  } else if (second) {
    need(pf.lagrangian.has_value(), "/lagrangian", "second-order modes need a Lagrangian");
    need(pf.constraints.empty() || !pf.cost, "/constraints", "constraints come from the actuation when a cost is given");
    if (pf.mode == "second-order") need(pf.initial.x0 && pf.initial.y0, "/initial", "second-order mode needs x0 and y0");
    if (pf.mode == "solve-ocp") need(pf.boundary.has_value(), "/boundary", "solve-ocp needs boundary data");
  }
  return pf;
}

json read_document(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("malformed JSON: ") + e.what());
  }
}

ProblemFile load_problem(const fs::path& path) { return parse_problem(read_document(path)); }

// ---- running ----

namespace {

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json mat_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

std::vector<std::string> names(const std::string& block, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(coordinate_name(block, i));
  return out;
}

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Eigen::VectorXd or_zero(const std::optional<Eigen::VectorXd>& v, std::size_t n) {
  return v ? *v : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
}

struct Run {
  const ProblemFile& pf;
  RunOptions options;
  json report = json::object();
  std::string stage = "cli";
  std::optional<Trajectory> table;
  std::vector<std::string> columns;

  void check(const std::string& name, double value, double tol) {
    report["checks"].push_back({{"name", name}, {"value", value}, {"tolerance", tol}, {"pass", value < tol}});
  }
  double newton_tol() const { return options.tol.value_or(pf.solver.newton_tol); }
};

// Problems built from the second-order sections of the file.
struct SecondOrderSetup {
  std::optional<ControlProblem> control;
  std::optional<SecondOrderProblem> plain;
  std::optional<ReducedUnderactuatedProblem> under;

  const SecondOrderProblem& problem() const { return under ? under->problem : *plain; }
  bool has_reduced() const { return under || plain->mode() == Mode::unconstrained || plain->elimination(); }
  const ReducedSystem& system() const { return problem().reduced(); }
};

SecondOrderSetup second_order_setup(Run& run) {
  const ProblemFile& pf = run.pf;
  SecondOrderSetup s;
  if (pf.cost) {
    run.stage = "ocp";
    s.control = ControlProblem{pf.chart, *pf.lagrangian, *pf.cost, *pf.actuation};
    if (s.control->fully_actuated()) {
      s.plain = build_fully_actuated(*s.control);
    } else {
      s.under = build_underactuated(*s.control);
    }
  } else {
    run.stage = "sorusk";
    if (pf.constraints.empty()) {
      s.plain = SecondOrderProblem(pf.chart, *pf.lagrangian);
    } else {
      s.plain = SecondOrderProblem(pf.chart, *pf.lagrangian, pf.constraints, Mode::constrained_multipliers, pf.elimination);
    }
  }
  run.report["problem"] = {{"mode", mode_name(s.problem().mode())}, {"second_order_lagrangian", to_string(s.problem().lagrangian())}};
  if (s.under) {
    json g = json::array();
    for (const auto& e : s.under->G) g.push_back(to_string(e));
    run.report["problem"]["eliminated_accelerations"] = g;
    run.report["problem"]["reduced_lagrangian"] = to_string(s.under->reduced_lagrangian);
  }
  return s;
}

void regularity_or_throw(Run& run, const RegularityResult& r) {
  run.report["regularity"] = {{"check", r.check},
                              {"matrix", mat_json(r.matrix)},
                              {"min_singular_value", r.min_singular_value},
                              {"regular", r.regular}};
  if (!r.regular) throw RegularityError("regularity matrix (" + r.check + ") is singular at the initial state", r.matrix);
}

// Display rows (x, y, z full, p, pbar) with H and primary-constraint monitors.
void reduced_table(Run& run, const ReducedSystem& sys, const Trajectory& tr) {
  const std::size_t m = sys.chart().base_dim();
  const std::size_t n = sys.chart().fiber_rank();
  const std::size_t k = sys.free_count();
  Trajectory disp;
  disp.t = tr.t;
  for (const auto& v : tr.states) {
    PontryaginState s = PontryaginState::unflatten(v, m, n, k);
    s.z = sys.full_z(s);
    disp.states.push_back(s.flatten());
  }
  disp.add_monitor("H", [&](double, const Eigen::VectorXd& v) { return sys.hamiltonian(PontryaginState::unflatten(v, m, n, n)); });
  for (std::size_t a = 0; a < k; ++a) {
    disp.add_monitor(coordinate_name("c", a), [&, a](double, const Eigen::VectorXd& v) {
      return sys.primary_constraint(PontryaginState::unflatten(v, m, n, n))[static_cast<Eigen::Index>(a)];
    });
  }
  run.columns = concat({names("x", m), names("y", n), names("z", n), names("p", n), names("pbar", n)});
  run.table = std::move(disp);
}

double spline_residual_max(const SecondOrderProblem& prob, const Trajectory& tr) {
  const auto m = static_cast<Eigen::Index>(prob.base_dim());
  const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
  const double step = std::max(1e-3, 10.0 * tr.max_step());
  const double t0 = tr.t.front() + 2 * step;
  const double t1 = tr.t.back() - 2 * step;
  if (!(t1 > t0)) return NAN;
  double worst = 0.0;
  const int samples = 100;
  for (int i = 0; i <= samples; ++i) {
    const double t = t0 + (t1 - t0) * i / samples;
    const Eigen::VectorXd v = tr.at(t);
    SecondOrderJet jet{v.segment(0, m), v.segment(m, n), v.segment(m + n, n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index c = 0; c < n; ++c) {
      jet.y2[c] = finite_difference_jet(tr, static_cast<std::size_t>(m + n + c), 1, t, step);
      jet.y3[c] = finite_difference_jet(tr, static_cast<std::size_t>(m + n + c), 2, t, step);
    }
    worst = std::max(worst, second_order_el_residual(prob, jet).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

void report_reduced_run(Run& run, const SecondOrderSetup& setup, const Trajectory& tr) {
  const ReducedSystem& sys = setup.system();
  reduced_table(run, sys, tr);
  const double drift = run.table->monitor_drift("H");
  run.report["hamiltonian_drift"] = drift;
  run.check("hamiltonian_drift", drift, 1e-6);
  double primary = 0.0;
  for (const auto& name : run.table->monitor_names())
    if (name != "H") primary = std::max(primary, run.table->monitor_max_abs(name));
  run.report["primary_constraint_max"] = primary;
  run.check("primary_constraint", primary, 1e-8);
  const std::size_t m = run.pf.m();
  const std::size_t n = run.pf.n();
  if (setup.under) {
    double phi = 0.0;
    for (const auto& v : run.table->states) {
      const PontryaginState s = PontryaginState::unflatten(v, m, n, n);
      const Derivatives d = setup.problem().evaluate(s.x, s.y, s.z, 0);
      phi = std::max(phi, d.value.tail(d.value.size() - 1).lpNorm<Eigen::Infinity>());
    }
    run.report["constraint_residual_max"] = phi;
    run.check("unactuated_equations", phi, 1e-8);
  }
  if (setup.problem().mode() == Mode::unconstrained) {
    const double r = spline_residual_max(setup.problem(), tr);
    run.report["spline_residual_max"] = r;
    run.check("second_order_euler_lagrange", r, 1e-5);
  }
  if (setup.control) {
    const ControlReconstruction u(*setup.control);
    const PontryaginState s0 = PontryaginState::unflatten(run.table->states.front(), m, n, n);
    const PontryaginState s1 = PontryaginState::unflatten(run.table->states.back(), m, n, n);
    run.report["controls"] = {{"t0", vec_json(u(s0.x, s0.y, s0.z))}, {"T", vec_json(u(s1.x, s1.y, s1.z))}};
  }
}

VectorField reduced_field(const ReducedSystem& sys) {
  const std::size_t m = sys.chart().base_dim();
  const std::size_t n = sys.chart().fiber_rank();
  const std::size_t k = sys.free_count();
  return [&sys, m, n, k](double, const Eigen::VectorXd& v) {
    return sys.field(PontryaginState::unflatten(v, m, n, k)).flatten();
  };
}

int run_validate(Run& run) {
  run.stage = "algebroid";
  const ProblemFile& pf = run.pf;
  const double tol = run.options.tol.value_or(pf.validation.tol);
  const auto samples = sample_box(pf.m(), pf.validation.samples, pf.validation.lo, pf.validation.hi, run.options.seed);
  const ValidationReport rep = validate_chart(pf.chart, samples, tol);
  auto axiom = [](const AxiomResidual& r) { return json{{"max", r.max}, {"sample", r.sample}, {"location", r.location}}; };
  run.report["validation"] = {{"antisymmetry", axiom(rep.antisymmetry)},
                              {"anchor_bracket", axiom(rep.anchor_bracket)},
                              {"jacobi", axiom(rep.jacobi)},
                              {"samples", rep.samples},
                              {"box", {pf.validation.lo, pf.validation.hi}},
                              {"seed", run.options.seed},
                              {"tol", rep.tol},
                              {"pass", rep.pass},
                              {"domain_note", rep.domain_note}};
  run.check("antisymmetry", rep.antisymmetry.max, tol);
  run.check("anchor_bracket", rep.anchor_bracket.max, tol);
  run.check("jacobi_identity", rep.jacobi.max, tol);
  return rep.pass ? exit_ok : exit_validation;
}

int run_simulate_el(Run& run) {
  run.stage = "mechanics";
  const ProblemFile& pf = run.pf;
  const LagrangianProblem prob(pf.chart, *pf.lagrangian);
  std::optional<ForceSection> force;
  if (!pf.force.empty()) force.emplace(pf.m(), pf.n(), pf.force);
  const auto m = static_cast<Eigen::Index>(pf.m());
  const auto n = static_cast<Eigen::Index>(pf.n());
  Eigen::VectorXd s0(m + n);
  s0 << *pf.initial.x0, *pf.initial.y0;
  auto field = [&](double t, const Eigen::VectorXd& v) {
    return el_vector_field(prob, {v.head(m), v.tail(n)}, force ? &*force : nullptr, t);
  };
  field(0.0, s0);
  run.stage = "solve";
  Trajectory tr = integrate(field, s0, pf.T, pf.solver.integrator());
  tr.add_monitor("E", [&](double, const Eigen::VectorXd& v) { return energy(prob, {v.head(m), v.tail(n)}); });
  const double drift = tr.monitor_drift("E");
  run.report["energy_drift"] = drift;
  if (!force) run.check("energy_drift", drift, 1e-6);
  run.columns = concat({names("x", pf.m()), names("y", pf.n())});
  run.table = std::move(tr);
  return exit_ok;
}

int run_simulate_hamilton(Run& run) {
  run.stage = "mechanics";
  const ProblemFile& pf = run.pf;
  const HamiltonianProblem prob(pf.chart, *pf.hamiltonian);
  const auto m = static_cast<Eigen::Index>(pf.m());
  const auto n = static_cast<Eigen::Index>(pf.n());
  Eigen::VectorXd s0(m + n);
  s0 << *pf.initial.x0, *pf.initial.p0;
  auto field = [&](double, const Eigen::VectorXd& v) {
    const HamiltonRates r = hamilton_field(prob, v.head(m), v.tail(n));
    Eigen::VectorXd out(m + n);
    out << r.xdot, r.pdot;
    return out;
  };
  run.stage = "solve";
  Trajectory tr = integrate(field, s0, pf.T, pf.solver.integrator());
  tr.add_monitor("H", [&](double, const Eigen::VectorXd& v) { return prob.evaluate(v.head(m), v.tail(n), 0).value[0]; });
  const double drift = tr.monitor_drift("H");
  run.report["hamiltonian_drift"] = drift;
  run.check("hamiltonian_drift", drift, 1e-6);
  run.columns = concat({names("x", pf.m()), names("p", pf.n())});
  run.table = std::move(tr);
  return exit_ok;
}

PontryaginState initial_state(const ProblemFile& pf) {
  PontryaginState s;
  s.x = or_zero(pf.initial.x0, pf.m());
  s.y = or_zero(pf.initial.y0, pf.n());
  s.z = or_zero(pf.initial.z0, pf.n());
  s.p = or_zero(pf.initial.p0, pf.n());
  s.pbar = or_zero(pf.initial.pbar0, pf.n());
  return s;
}

int run_multiplier_ivp(Run& run, const SecondOrderProblem& prob) {
  const ProblemFile& pf = run.pf;
  const std::size_t m = pf.m();
  const std::size_t n = pf.n();
  const std::size_t q = prob.constraints().size();
  PontryaginState s0 = initial_state(pf);
  const Eigen::VectorXd lambda0 = consistent_multipliers(prob, s0);
  // Put pbar on the primary constraint pbar = d(L + lambda Phi)/dz.
  {
    const Derivatives d = prob.evaluate(s0.x, s0.y, s0.z, 1);
    const auto off = static_cast<Eigen::Index>(m + n);
    const auto nn = static_cast<Eigen::Index>(n);
    s0.pbar = d.jacobian.row(0).segment(off, nn).transpose();
    for (std::size_t b = 0; b < q; ++b)
      s0.pbar += lambda0[static_cast<Eigen::Index>(b)] * d.jacobian.row(static_cast<Eigen::Index>(1 + b)).segment(off, nn).transpose();
  }
  regularity_or_throw(run, regularity_test(prob, s0, lambda0));
  const auto N = static_cast<Eigen::Index>(m + 4 * n);
  Eigen::VectorXd v0(N + static_cast<Eigen::Index>(q));
  v0 << s0.flatten(), lambda0;
  auto field = [&](double, const Eigen::VectorXd& v) {
    const PontryaginState s = PontryaginState::unflatten(v.head(N), m, n, n);
    const MultiplierRates r = multiplier_field(prob, s, v.tail(static_cast<Eigen::Index>(q)));
    Eigen::VectorXd out(v.size());
    out << r.rates.flatten(), r.lambda_dot;
    return out;
  };
  run.stage = "solve";
  Trajectory tr = integrate(field, v0, pf.T, pf.solver.integrator());
  tr.add_monitor("H", [&](double, const Eigen::VectorXd& v) {
    const PontryaginState s = PontryaginState::unflatten(v.head(N), m, n, n);
    const Derivatives d = prob.evaluate(s.x, s.y, s.z, 0);
    return s.pbar.dot(s.z) + s.p.dot(s.y) - d.value[0] - v.tail(static_cast<Eigen::Index>(q)).dot(d.value.tail(static_cast<Eigen::Index>(q)));
  });
  for (std::size_t b = 0; b < q; ++b) {
    tr.add_monitor(coordinate_name("c", b), [&, b](double, const Eigen::VectorXd& v) {
      const PontryaginState s = PontryaginState::unflatten(v.head(N), m, n, n);
      return prob.evaluate(s.x, s.y, s.z, 0).value[static_cast<Eigen::Index>(1 + b)];
    });
  }
  double phi = 0.0;
  for (std::size_t b = 0; b < q; ++b) phi = std::max(phi, tr.monitor_max_abs(coordinate_name("c", b)));
  run.report["hamiltonian_drift"] = tr.monitor_drift("H");
  run.report["constraint_residual_max"] = phi;
  run.check("hamiltonian_drift", tr.monitor_drift("H"), 1e-6);
  run.check("constraints", phi, 1e-6);
  run.columns = concat({names("x", m), names("y", n), names("z", n), names("p", n), names("pbar", n), names("lambda", q)});
  run.table = std::move(tr);
  return exit_ok;
}

int run_second_order(Run& run) {
  const ProblemFile& pf = run.pf;
  const SecondOrderSetup setup = second_order_setup(run);
  run.stage = "sorusk";
  if (!setup.has_reduced()) return run_multiplier_ivp(run, setup.problem());
  const ReducedSystem& sys = setup.system();
  const PontryaginState s0 = sys.project_to_primary(initial_state(pf));
  regularity_or_throw(run, regularity_test(setup.problem(), s0));
  PontryaginState reduced0 = s0;
  reduced0.z.resize(static_cast<Eigen::Index>(sys.free_count()));
  for (std::size_t a = 0; a < sys.free_count(); ++a)
    reduced0.z[static_cast<Eigen::Index>(a)] = s0.z[static_cast<Eigen::Index>(sys.free_indices()[a])];
  run.stage = "solve";
  const Trajectory tr = integrate(reduced_field(sys), reduced0.flatten(), pf.T, pf.solver.integrator());
  report_reduced_run(run, setup, tr);
  return exit_ok;
}

int run_solve_ocp(Run& run) {
  const ProblemFile& pf = run.pf;
  const SecondOrderSetup setup = second_order_setup(run);
  if (!setup.has_reduced()) {
    throw SchemaError("/elimination", "boundary-value solving needs the constrained accelerations eliminated");
  }
  const ReducedSystem& sys = setup.system();
  ShootingProblem sp;
  try {
    sp = optimality_shooting(sys, *pf.boundary);
  } catch (const DimensionError& e) {
    throw SchemaError("/boundary", e.what());
  }
  const Eigen::VectorXd guess = pf.guess ? *pf.guess : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sp.unknown_count));
  if (static_cast<std::size_t>(guess.size()) != sp.unknown_count) {
    throw SchemaError("/guess", "needs " + std::to_string(sp.unknown_count) + " entries");
  }
  run.stage = "sorusk";
  const PontryaginState g0 =
      PontryaginState::unflatten(sp.initial_state(guess), pf.m(), pf.n(), sys.free_count());
  regularity_or_throw(run, regularity_test(setup.problem(), g0));
  run.stage = "solve";
  ShootingOptions opt;
  opt.method = pf.solver.integrator();
  opt.newton_tol = run.newton_tol();
  opt.max_iter = pf.solver.max_iter;
  opt.segments = pf.solver.segments;
  const ShootingResult res = shoot(sp, guess, opt);
  run.report["shooting"] = {{"converged", res.converged},
                            {"residual_norm", res.residual_norm},
                            {"iterations", res.iterations},
                            {"unknowns", vec_json(res.unknowns)},
                            {"segments", opt.segments},
                            {"message", res.message}};
  run.check("shooting_residual", res.residual_norm, opt.newton_tol);
  report_reduced_run(run, setup, res.trajectory);
  if (!res.converged) {
    run.report["error"] = {{"module", "solve"}, {"message", "shooting did not converge: " + res.message}};
    return exit_nonconvergence;
  }
  return exit_ok;
}

int run_vakonomic(Run& run) {
  run.stage = "sorusk";
  const ProblemFile& pf = run.pf;
  const SecondOrderProblem prob(pf.chart, *pf.lagrangian, pf.constraints, Mode::vakonomic, pf.elimination);
  const std::size_t m = pf.m();
  const std::size_t n = pf.n();
  std::vector<std::size_t> free;
  for (std::size_t a = 0; a < n; ++a)
    if (std::find(pf.elimination->constrained.begin(), pf.elimination->constrained.end(), a) == pf.elimination->constrained.end())
      free.push_back(a);
  const auto k = static_cast<Eigen::Index>(free.size());
  VakonomicState s0;
  s0.x = *pf.initial.x0;
  s0.p = *pf.initial.p0;
  if (pf.initial.y0->size() == k) {
    s0.y = *pf.initial.y0;
  } else {
    s0.y.resize(k);
    for (Eigen::Index a = 0; a < k; ++a) s0.y[a] = (*pf.initial.y0)[static_cast<Eigen::Index>(free[static_cast<std::size_t>(a)])];
  }
  const Eigen::VectorXd c0 = vakonomic_constraint(prob, s0);
  for (Eigen::Index a = 0; a < k; ++a) s0.p[static_cast<Eigen::Index>(free[static_cast<std::size_t>(a)])] -= c0[a];
  PontryaginState probe;
  probe.x = s0.x;
  probe.y = s0.y;
  probe.p = s0.p;
  regularity_or_throw(run, regularity_test(prob, probe));

  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  auto unpack = [M, N, k](const Eigen::VectorXd& v) { return VakonomicState{v.head(M), v.segment(M, N), v.tail(k)}; };
  Eigen::VectorXd v0(M + N + k);
  v0 << s0.x, s0.p, s0.y;
  auto field = [&](double, const Eigen::VectorXd& v) {
    const VakonomicState r = vakonomic_field(prob, unpack(v));
    Eigen::VectorXd out(v.size());
    out << r.x, r.p, r.y;
    return out;
  };
  run.stage = "solve";
  Trajectory tr = integrate(field, v0, pf.T, pf.solver.integrator());
  tr.add_monitor("H", [&](double, const Eigen::VectorXd& v) { return vakonomic_hamiltonian(prob, unpack(v)); });
  for (Eigen::Index a = 0; a < k; ++a) {
    tr.add_monitor(coordinate_name("c", static_cast<std::size_t>(a)),
                   [&, a](double, const Eigen::VectorXd& v) { return vakonomic_constraint(prob, unpack(v))[a]; });
  }
  double c = 0.0;
  for (Eigen::Index a = 0; a < k; ++a) c = std::max(c, tr.monitor_max_abs(coordinate_name("c", static_cast<std::size_t>(a))));
  run.report["hamiltonian_drift"] = tr.monitor_drift("H");
  run.report["constraint_residual_max"] = c;
  run.check("hamiltonian_drift", tr.monitor_drift("H"), 1e-6);
  run.check("vakonomic_constraint", c, 1e-8);
  std::vector<std::string> ycols;
  for (auto a : free) ycols.push_back(coordinate_name("y", a));
  run.columns = concat({names("x", m), names("p", n), ycols});
  run.table = std::move(tr);
  return exit_ok;
}

int run_constraint_chain(Run& run) {
  const ProblemFile& pf = run.pf;
  const SecondOrderSetup setup = second_order_setup(run);
  run.stage = "sorusk";
  PontryaginState s = initial_state(pf);
  const InitialData& in = pf.initial;
  if (!in.x0 || !in.y0 || !in.z0 || !in.p0 || !in.pbar0) {
    const auto r = sample_box(pf.m() + 4 * pf.n(), 1, -1.0, 1.0, run.options.seed).front();
    const PontryaginState rs = PontryaginState::unflatten(r, pf.m(), pf.n(), pf.n());
    if (!in.x0) s.x = rs.x;
    if (!in.y0) s.y = rs.y;
    if (!in.z0) s.z = rs.z;
    if (!in.p0) s.p = rs.p;
    if (!in.pbar0) s.pbar = rs.pbar;
  }
  const double tol = run.options.tol.value_or(1e-9);
  const ConstraintChainReport rep = run_constraint_algorithm(setup.problem(), s, pf.solver.max_levels, tol);
  json levels = json::array();
  for (const auto& l : rep.levels) {
    json cands = json::array();
    for (const auto& e : l.candidates) cands.push_back(to_string(e));
    json found = json::array();
    for (const auto& e : l.new_constraints) found.push_back(to_string(e));
    levels.push_back({{"level", l.level},
                      {"manifold_dim", l.manifold_dim},
                      {"kernel_dim", l.kernel_dim},
                      {"candidates", cands},
                      {"candidate_values", vec_json(l.candidate_values)},
                      {"new_constraints", found},
                      {"projection_residual", l.projection_residual},
                      {"stabilized", l.stabilized}});
  }
  run.report["constraint_chain"] = {{"point", vec_json(s.flatten())},
                                    {"levels", levels},
                                    {"stabilized", rep.stabilized},
                                    {"consistent", rep.consistent},
                                    {"nontrivial_levels", rep.nontrivial_levels()},
                                    {"note", rep.note}};
  if (!rep.stabilized && rep.consistent) {
    run.report["error"] = {{"module", "sorusk"}, {"message", rep.note}};
    return exit_nonconvergence;
  }
  return exit_ok;
}

void write_outputs(const Run& run, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  if (run.table) {
    std::ofstream csv(out_dir / "trajectory.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (out_dir / "trajectory.csv").string());
    write_csv(csv, *run.table, run.columns);
  }
  std::ofstream rep(out_dir / "report.json", std::ios::binary);
  if (!rep) throw IoError("cannot write " + (out_dir / "report.json").string());
  rep << run.report.dump(2) << '\n';
}

const char* status_name(int code) {
  switch (code) {
    case exit_ok: return "ok";
    case exit_schema: return "schema_or_io_error";
    case exit_nonconvergence: return "nonconvergence";
    case exit_regularity: return "regularity_failure";
    case exit_validation: return "validation_failure";
  }
  return "unknown";
}

RunOutcome finish(Run& run, int code, const std::string& message, const std::optional<fs::path>& out_dir) {
  run.report["exit_code"] = code;
  run.report["status"] = status_name(code);
  RunOutcome out;
  out.exit_code = code;
  out.message = message;
  if (out_dir) {
    try {
      write_outputs(run, *out_dir);
    } catch (const IoError& e) {
      out.exit_code = exit_schema;
      out.message = e.what();
    }
  }
  out.report = run.report;
  return out;
}

RunOutcome guarded(Run& run, const std::optional<fs::path>& out_dir, int (*body)(Run&)) {
  run.report["mode"] = run.pf.mode;
  run.report["chart"] = {{"name", run.pf.chart.name()}, {"m", run.pf.m()}, {"n", run.pf.n()}};
  run.report["checks"] = json::array();
  int code = exit_ok;
  std::string message;
  auto fail = [&](int c, const std::string& what) {
    code = c;
    message = run.stage + ": " + what;
    run.report["error"] = {{"module", run.stage}, {"message", what}};
  };
  try {
    code = body(run);
    if (run.report.contains("error")) message = run.report["error"]["message"].get<std::string>();
  } catch (const RegularityError& e) {
    fail(exit_regularity, e.what());
    run.report["error"]["matrix"] = mat_json(e.matrix());
  } catch (const SchemaError& e) {
    fail(exit_schema, e.what());
    run.report["error"]["pointer"] = e.pointer();
  } catch (const ConvergenceError& e) {
    fail(exit_nonconvergence, e.what());
  } catch (const EvaluationError& e) {
    fail(exit_nonconvergence, e.what());
  } catch (const Error& e) {
    fail(exit_schema, e.what());
  }
  return finish(run, code, message, out_dir);
}

}  // namespace

RunOutcome run_problem(const ProblemFile& pf, const fs::path& out_dir, const RunOptions& options) {
  Run run{pf, options, json::object(), "cli", std::nullopt, {}};
  int (*body)(Run&) = nullptr;
  if (pf.mode == "validate") body = run_validate;
  else if (pf.mode == "simulate-el") body = run_simulate_el;
  else if (pf.mode == "simulate-hamilton") body = run_simulate_hamilton;
  else if (pf.mode == "second-order") body = run_second_order;
  else if (pf.mode == "vakonomic") body = run_vakonomic;
  else if (pf.mode == "solve-ocp") body = run_solve_ocp;
  else body = run_constraint_chain;
  return guarded(run, out_dir, body);
}

RunOutcome validate_problem(const ProblemFile& pf, const std::optional<fs::path>& out_dir, const RunOptions& options) {
  Run run{pf, options, json::object(), "cli", std::nullopt, {}};
  return guarded(run, out_dir, run_validate);
}

SweepAxis parse_sweep_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || spec[0] != '/') throw SchemaError("", "sweep axis must look like /json/pointer=v1,v2");
  SweepAxis axis;
  axis.pointer = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const json v = json::parse(item, nullptr, false);
    axis.values.push_back(v.is_discarded() ? json(item) : v);
  }
  if (axis.values.empty()) throw SchemaError(axis.pointer, "sweep axis has no values");
  return axis;
}

int run_sweep(const json& doc, const std::vector<SweepAxis>& axes, const fs::path& out_dir, const RunOptions& options,
              std::size_t threads) {
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.values.size();
  std::vector<json> docs(total, doc);
  std::vector<json> settings(total, json::object());
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rest = i;
    for (std::size_t j = axes.size(); j-- > 0;) {
      const auto& a = axes[j];
      const json& v = a.values[rest % a.values.size()];
      rest /= a.values.size();
      try {
        docs[i][json::json_pointer(a.pointer)] = v;
      } catch (const json::exception& e) {
        throw SchemaError(a.pointer, e.what());
      }
      settings[i][a.pointer] = v;
    }
  }
  std::vector<int> codes(total, exit_ok);
  std::vector<std::string> messages(total);
  auto dir = [&](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "point_%03zu", i);
    return out_dir / buf;
  };
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      try {
        const RunOutcome r = run_problem(parse_problem(docs[i]), dir(i), options);
        codes[i] = r.exit_code;
        messages[i] = r.message;
      } catch (const Error& e) {
        codes[i] = exit_schema;
        messages[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, total));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  json index = json::array();
  int worst = exit_ok;
  for (std::size_t i = 0; i < total; ++i) {
    index.push_back({{"directory", dir(i).filename().string()}, {"settings", settings[i]}, {"exit_code", codes[i]}, {"message", messages[i]}});
    worst = std::max(worst, codes[i]);
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(out_dir / "sweep.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (out_dir / "sweep.json").string());
  out << json{{"points", index}}.dump(2) << '\n';
  return worst;
}

}  // namespace algmech
