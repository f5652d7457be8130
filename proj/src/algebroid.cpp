#include "algmech/algebroid.hpp"

#include "algmech/error.hpp"
#include "algmech/parser.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace algmech {

StructureTable::StructureTable(std::size_t n) : n_(n), upper_(n * (n > 0 ? n - 1 : 0) / 2 * n) {}

std::size_t StructureTable::pair_index(std::size_t a, std::size_t b) const {
  // a < b; pairs enumerated row by row: (0,1),(0,2),...,(1,2),...
  return a * n_ - a * (a + 1) / 2 + (b - a - 1);
}

void StructureTable::set(std::size_t c, std::size_t a, std::size_t b, const Expr& value) {
  if (a >= n_ || b >= n_ || c >= n_) throw DimensionError("structure index out of range");
  if (a == b) {
    if (!value.is_constant(0.0)) throw Error("structure functions must vanish for equal lower indices");
    return;
  }
  if (a < b) {
    upper_[pair_index(a, b) * n_ + c] = value;
  } else {
    upper_[pair_index(b, a) * n_ + c] = -value;
  }
}

Expr StructureTable::get(std::size_t c, std::size_t a, std::size_t b) const {
  if (a == b) return Expr();
  if (a < b) return upper_[pair_index(a, b) * n_ + c];
  return -upper_[pair_index(b, a) * n_ + c];
}

AlgebroidChart::AlgebroidChart(std::string name, std::size_t m, std::size_t n, std::vector<Expr> anchor,
                               StructureTable structure)
    : name_(std::move(name)), m_(m), n_(n), anchor_(std::move(anchor)), structure_(std::move(structure)) {
  if (n == 0) throw DimensionError("fiber rank must be positive");
  if (anchor_.size() != m * n) throw DimensionError("anchor must have m*n entries");
  if (structure_.rank() != n) throw DimensionError("structure table rank differs from fiber rank");
  VariableLayout layout;
  layout.add_block("x", m);
  std::vector<Expr> outputs = anchor_;
  outputs.insert(outputs.end(), structure_.stored().begin(), structure_.stored().end());
  for (const auto& e : outputs) require_variables(e, layout, "chart '" + name_ + "'");
  compiled_ = CompiledExprs(outputs, layout);
}

ChartPoint AlgebroidChart::at(const Eigen::VectorXd& x, int order) const {
  if (static_cast<std::size_t>(x.size()) != m_) throw DimensionError("base point has the wrong dimension");
  const Derivatives d = compiled_.evaluate(std::span<const double>(x.data(), m_), order);
  ChartPoint p;
  const auto m = static_cast<Eigen::Index>(m_);
  const auto n = static_cast<Eigen::Index>(n_);
  p.rho.resize(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index a = 0; a < n; ++a) p.rho(i, a) = d.value[i * n + a];
  if (order >= 1) {
    p.drho.assign(m_, Eigen::MatrixXd::Zero(m, n));
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index a = 0; a < n; ++a) p.drho[j](i, a) = d.jacobian(i * n + a, j);
  }
  p.C.n = n_;
  p.C.m = m_;
  p.C.c.assign(n_ * n_ * n_, 0.0);
  if (order >= 1) p.C.dc.assign(n_ * n_ * n_ * m_, 0.0);
  const std::size_t base = m_ * n_;
  for (std::size_t a = 0; a < n_; ++a) {
    for (std::size_t b = a + 1; b < n_; ++b) {
      for (std::size_t c = 0; c < n_; ++c) {
        const auto k = static_cast<Eigen::Index>(base + structure_.pair_index(a, b) * n_ + c);
        const double v = d.value[k];
        p.C.c[(c * n_ + a) * n_ + b] = v;
        p.C.c[(c * n_ + b) * n_ + a] = -v;
        if (order >= 1) {
          for (std::size_t i = 0; i < m_; ++i) {
            const double dv = d.jacobian(k, static_cast<Eigen::Index>(i));
            p.C.dc[((c * n_ + a) * n_ + b) * m_ + i] = dv;
            p.C.dc[((c * n_ + b) * n_ + a) * m_ + i] = -dv;
          }
        }
      }
    }
  }
  return p;
}

Eigen::MatrixXd AlgebroidChart::anchor_at(const Eigen::VectorXd& x) const { return at(x, 0).rho; }

SmoothField AlgebroidChart::anchor_field() const {
  return SmoothField(Shape::matrix(m_, n_), anchor_, VariableLayout{{"x", m_}});
}

SmoothField AlgebroidChart::structure_field() const {
  std::vector<Expr> entries;
  entries.reserve(n_ * n_ * n_);
  for (std::size_t c = 0; c < n_; ++c)
    for (std::size_t a = 0; a < n_; ++a)
      for (std::size_t b = 0; b < n_; ++b) entries.push_back(structure_.get(c, a, b));
  return SmoothField(Shape::array3(n_, n_, n_), entries, VariableLayout{{"x", m_}});
}

double ValidationReport::max_residual() const {
  return std::max({antisymmetry.max, anchor_bracket.max, jacobi.max});
}

std::vector<Eigen::VectorXd> sample_box(std::size_t m, std::size_t count, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Eigen::VectorXd> out(count, Eigen::VectorXd(static_cast<Eigen::Index>(m)));
  for (auto& v : out)
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(gen);
  return out;
}

namespace {

void record(AxiomResidual& r, double value, std::size_t sample, const std::string& where) {
  if (value > r.max || (r.location.empty() && value >= r.max)) {
    r.max = value;
    r.sample = sample;
    r.location = where;
  }
}

std::string indices(std::initializer_list<std::pair<const char*, std::size_t>> parts) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : parts) {
    os << (first ? "" : ",") << k << "=" << v + 1;
    first = false;
  }
  return os.str();
}

}  // namespace

ValidationReport validate_chart(const AlgebroidChart& chart, const std::vector<Eigen::VectorXd>& samples, double tol) {
  if (samples.empty()) throw Error("validate_chart needs at least one sample");
  if (!(tol > 0.0)) throw Error("validation tolerance must be positive");
  const std::size_t m = chart.base_dim();
  const std::size_t n = chart.fiber_rank();
  ValidationReport rep;
  rep.samples = samples.size();
  rep.tol = tol;
  rep.domain_note = "residuals are sampled at the listed base points only; the sample box stands in for the chart domain";

  for (std::size_t s = 0; s < samples.size(); ++s) {
    ChartPoint p;
    try {
      p = chart.at(samples[s], 1);
    } catch (const EvaluationError& e) {
      std::ostringstream os;
      os << "sample " << s << " (x = " << samples[s].transpose() << "): " << e.what();
      throw EvaluationError(os.str());
    }
    const auto& C = p.C;
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          record(rep.antisymmetry, std::abs(C(c, a, b) + C(c, b, a)), s, indices({{"C", c}, {"A", a}, {"B", b}}));

    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          double lhs = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            lhs += p.rho(j, a) * p.drho[j](i, b) - p.rho(j, b) * p.drho[j](i, a);
          }
          double rhs = 0.0;
          for (std::size_t c = 0; c < n; ++c) rhs += p.rho(i, c) * C(c, a, b);
          record(rep.anchor_bracket, std::abs(lhs - rhs), s, indices({{"i", i}, {"A", a}, {"B", b}}));
        }
      }
    }

    auto cyclic_term = [&](std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
      double t = 0.0;
      for (std::size_t i = 0; i < m; ++i) t += p.rho(i, a) * C.d(d, b, c, i);
      for (std::size_t f = 0; f < n; ++f) t += C(d, a, f) * C(f, b, c);
      return t;
    };
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        for (std::size_t c = b + 1; c < n; ++c)
          for (std::size_t d = 0; d < n; ++d) {
            const double r = cyclic_term(a, b, c, d) + cyclic_term(b, c, a, d) + cyclic_term(c, a, b, d);
            record(rep.jacobi, std::abs(r), s, indices({{"A", a}, {"B", b}, {"C", c}, {"D", d}}));
          }
  }
  rep.pass = rep.max_residual() < tol;
  return rep;
}

ValidationReport validate_structure_array(std::size_t n, const std::vector<double>& c, double tol) {
  if (c.size() != n * n * n) throw DimensionError("structure array needs n^3 entries");
  if (!(tol > 0.0)) throw Error("validation tolerance must be positive");
  auto C = [&](std::size_t d, std::size_t a, std::size_t b) { return c[(d * n + a) * n + b]; };
  ValidationReport rep;
  rep.samples = 1;
  rep.tol = tol;
  rep.domain_note = "constant structure data, checked entry by entry without enforcing antisymmetry";
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        record(rep.antisymmetry, std::abs(C(d, a, b) + C(d, b, a)), 0, indices({{"C", d}, {"A", a}, {"B", b}}));
  // Without antisymmetry every ordered triple carries its own cyclic sum.
  auto term = [&](std::size_t a, std::size_t b, std::size_t e, std::size_t d) {
    double t = 0.0;
    for (std::size_t f = 0; f < n; ++f) t += C(d, a, f) * C(f, b, e);
    return t;
  };
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t e = 0; e < n; ++e)
        for (std::size_t d = 0; d < n; ++d) {
          const double r = term(a, b, e, d) + term(b, e, a, d) + term(e, a, b, d);
          record(rep.jacobi, std::abs(r), 0, indices({{"A", a}, {"B", b}, {"C", e}, {"D", d}}));
        }
  rep.pass = rep.max_residual() < tol;
  return rep;
}

Eigen::VectorXd admissibility_residual(const AlgebroidChart& chart, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& xdot) {
  const auto m = static_cast<Eigen::Index>(chart.base_dim());
  const auto n = static_cast<Eigen::Index>(chart.fiber_rank());
  if (x.size() != m || xdot.size() != m || y.size() != n) throw DimensionError("admissibility_residual: dimension mismatch");
  if (m == 0) return Eigen::VectorXd(0);
  return xdot - chart.anchor_at(x) * y;
}

namespace {

StructureTable table_from(std::size_t n, const std::vector<StructureConstant>& constants) {
  StructureTable t(n);
  for (const auto& k : constants) {
    if (k.a >= n || k.b >= n || k.c >= n) throw Error("structure constant index out of range");
    if (k.a == k.b) {
      if (k.value != 0.0) throw Error("structure constants must vanish for equal lower indices");
      continue;
    }
    const Expr previous = t.get(k.c, k.a, k.b);
    if (!previous.is_constant(0.0) && previous.value() != k.value) {
      throw Error("structure constants are not antisymmetric in the lower indices");
    }
    t.set(k.c, k.a, k.b, Expr(k.value));
  }
  return t;
}

}  // namespace

AlgebroidChart tangent_bundle(std::size_t m) {
  if (m == 0) throw Error("tangent_bundle needs m >= 1");
  std::vector<Expr> rho(m * m);
  for (std::size_t i = 0; i < m; ++i) rho[i * m + i] = Expr(1.0);
  return AlgebroidChart("tangent_bundle", m, m, std::move(rho), StructureTable(m));
}

AlgebroidChart lie_algebra(std::size_t n, const std::vector<StructureConstant>& constants, std::string name) {
  return AlgebroidChart(std::move(name), 0, n, {}, table_from(n, constants));
}

AlgebroidChart so3() {
  return lie_algebra(3, {{0, 1, 2, 1.0}, {1, 2, 0, 1.0}, {2, 0, 1, 1.0}}, "so3");
}

AlgebroidChart se2() {
  // e1, e2 translations, e3 rotation: [e1,e3] = -e2, [e2,e3] = e1
  return lie_algebra(3, {{0, 2, 1, -1.0}, {1, 2, 0, 1.0}}, "se2");
}

AlgebroidChart action_algebroid(std::size_t m, std::size_t n, const std::vector<StructureConstant>& constants,
                                const std::vector<std::vector<Expr>>& generators) {
  if (generators.size() != n) throw Error("action_algebroid needs one generator per Lie algebra basis element");
  std::vector<Expr> rho(m * n);
  for (std::size_t a = 0; a < n; ++a) {
    if (generators[a].size() != m) throw Error("each generator needs m components");
    for (std::size_t i = 0; i < m; ++i) rho[i * n + a] = -generators[a][i];
  }
  return AlgebroidChart("action_algebroid", m, n, std::move(rho), table_from(n, constants));
}

AlgebroidChart atiyah_trivial(std::size_t m, std::size_t n_g, const std::vector<StructureConstant>& constants,
                              const std::vector<std::vector<Expr>>& connection,
                              std::vector<std::vector<std::vector<Expr>>> curvature) {
  if (connection.size() != n_g) throw Error("atiyah_trivial: connection needs n_g rows");
  for (const auto& row : connection)
    if (row.size() != m) throw Error("atiyah_trivial: connection rows need m entries");
  const StructureTable c = table_from(n_g, constants);
  const auto cg = [&](std::size_t cc, std::size_t a, std::size_t b) { return c.get(cc, a, b); };
  if (curvature.empty()) {
    // Bracket of horizontal lifts of coordinate fields, read off as -B e_C.
    const auto x = coordinates("x", m);
    curvature.assign(n_g, std::vector<std::vector<Expr>>(m, std::vector<Expr>(m)));
    for (std::size_t cc = 0; cc < n_g; ++cc)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          Expr b = differentiate(connection[cc][j], x[i].name()) - differentiate(connection[cc][i], x[j].name());
          for (std::size_t a = 0; a < n_g; ++a)
            for (std::size_t bb = 0; bb < n_g; ++bb) b -= cg(cc, a, bb) * connection[a][i] * connection[bb][j];
          curvature[cc][i][j] = b;
        }
  }
  if (curvature.size() != n_g) throw Error("atiyah_trivial: curvature needs n_g blocks");
  const std::size_t n = m + n_g;
  StructureTable t(n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      for (std::size_t cc = 0; cc < n_g; ++cc) t.set(m + cc, i, j, -curvature[cc][i][j]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < n_g; ++a)
      for (std::size_t cc = 0; cc < n_g; ++cc) {
        Expr v;
        for (std::size_t b = 0; b < n_g; ++b) v += cg(cc, a, b) * connection[b][i];
        t.set(m + cc, i, m + a, v);
      }
  for (std::size_t a = 0; a < n_g; ++a)
    for (std::size_t b = a + 1; b < n_g; ++b)
      for (std::size_t cc = 0; cc < n_g; ++cc) t.set(m + cc, m + a, m + b, cg(cc, a, b));
  std::vector<Expr> rho(m * n);
  for (std::size_t i = 0; i < m; ++i) rho[i * n + i] = Expr(1.0);
  return AlgebroidChart("atiyah_trivial", m, n, std::move(rho), std::move(t));
}

AlgebroidChart elroy_beanie(double i1, double i2) {
  if (!(i1 > 0.0) || !(i2 > 0.0)) throw Error("elroy_beanie needs positive inertias");
  const double r = std::sqrt((i1 + i2) / (i1 * i2));
  const double k = std::sqrt(i2 / (i1 * (i1 + i2)));
  const double s = 1.0 / std::sqrt(i1 + i2);
  StructureTable t(4);
  t.set(2, 0, 1, Expr(-k));
  t.set(1, 0, 2, Expr(k));
  t.set(2, 1, 3, Expr(-s));
  t.set(1, 2, 3, Expr(s));
  std::vector<Expr> rho(4);
  rho[0] = Expr(r);
  return AlgebroidChart("elroy_beanie", 1, 4, std::move(rho), std::move(t));
}

std::vector<StructureConstant> parse_structure_constants(const nlohmann::json& list, std::size_t n) {
  if (!list.is_array()) throw Error("structure constants must be a list");
  std::vector<StructureConstant> out;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const auto& e = list[k];
    auto index = [&](const char* key) {
      if (!e.contains(key) || !e[key].is_number_integer()) {
        throw Error("entry " + std::to_string(k) + " needs integer '" + key + "'");
      }
      const auto v = e[key].get<long long>();
      if (v < 1 || static_cast<std::size_t>(v) > n) throw Error("entry " + std::to_string(k) + ": '" + key + "' out of range");
      return static_cast<std::size_t>(v - 1);
    };
    const char* ckey = e.contains("C_index") ? "C_index" : "C";
    StructureConstant sc{index("A"), index("B"), index(ckey), 0.0};
    if (!e.contains("value") || !e["value"].is_number()) throw Error("entry " + std::to_string(k) + " needs numeric 'value'");
    sc.value = e["value"].get<double>();
    out.push_back(sc);
  }
  table_from(n, out);  // consistency check only
  return out;
}

namespace {

double number(const nlohmann::json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_number()) throw Error(std::string("parameter '") + key + "' must be a number");
  return p[key].get<double>();
}

std::size_t count(const nlohmann::json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_number_integer() || p[key].get<long long>() < 0) {
    throw Error(std::string("parameter '") + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(p[key].get<long long>());
}

std::vector<std::vector<Expr>> expr_rows(const nlohmann::json& node, const std::string& what, std::size_t rows,
                                         std::size_t cols, const Declarations& decl) {
  if (!node.is_array() || node.size() != rows) {
    throw Error("parameter '" + what + "' must be a list of " + std::to_string(rows) + " rows");
  }
  std::vector<std::vector<Expr>> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = node[r];
    if (!row.is_array() || row.size() != cols) {
      throw Error("parameter '" + what + "' rows need " + std::to_string(cols) + " entries");
    }
    for (const auto& cell : row) {
      if (cell.is_number()) {
        out[r].push_back(Expr(cell.get<double>()));
      } else if (cell.is_string()) {
        out[r].push_back(parse(cell.get<std::string>(), decl));
      } else {
        throw Error("parameter '" + what + "' entries must be numbers or expression strings");
      }
    }
  }
  return out;
}

std::vector<std::vector<Expr>> expr_matrix(const nlohmann::json& p, const char* key, std::size_t rows, std::size_t cols,
                                           const Declarations& decl) {
  if (!p.contains(key)) throw Error(std::string("missing parameter '") + key + "'");
  return expr_rows(p[key], key, rows, cols, decl);
}

}  // namespace

AlgebroidChart builtin_chart(const std::string& name, const nlohmann::json& params) {
  const nlohmann::json p = params.is_null() ? nlohmann::json::object() : params;
  if (!p.is_object()) throw Error("chart parameters must be an object");
  if (name == "tangent_bundle") return tangent_bundle(count(p, "m"));
  if (name == "so3") return so3();
  if (name == "se2") return se2();
  if (name == "lie_algebra") {
    const std::size_t n = count(p, "n");
    return lie_algebra(n, parse_structure_constants(p.value("constants", nlohmann::json::array()), n));
  }
  if (name == "action_algebroid") {
    const std::size_t m = count(p, "m");
    const std::size_t n = count(p, "n");
    Declarations decl;
    decl.block("x", m);
    return action_algebroid(m, n, parse_structure_constants(p.value("constants", nlohmann::json::array()), n),
                            expr_matrix(p, "generators", n, m, decl));
  }
  if (name == "atiyah_trivial") {
    const std::size_t m = count(p, "m");
    const std::size_t ng = count(p, "n_g");
    Declarations decl;
    decl.block("x", m);
    const auto constants = parse_structure_constants(p.value("constants", nlohmann::json::array()), ng);
    const auto connection = expr_matrix(p, "connection", ng, m, decl);
    std::vector<std::vector<std::vector<Expr>>> curvature;
    if (p.contains("curvature")) {
      if (!p["curvature"].is_array() || p["curvature"].size() != ng) throw Error("parameter 'curvature' needs n_g blocks");
      for (std::size_t c = 0; c < ng; ++c) curvature.push_back(expr_rows(p["curvature"][c], "curvature", m, m, decl));
    }
    return atiyah_trivial(m, ng, constants, connection, curvature);
  }
  if (name == "elroy_beanie") {
    if (p.contains("m") && count(p, "m") != 1) throw Error("elroy_beanie has a one-dimensional base");
    return elroy_beanie(number(p, "I1"), number(p, "I2"));
  }
  throw Error("unknown builtin chart '" + name + "'");
}

}  // namespace algmech
