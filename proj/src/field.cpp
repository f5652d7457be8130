#include "algmech/field.hpp"

#include "algmech/error.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace algmech {

VariableLayout::VariableLayout(std::initializer_list<std::pair<std::string, std::size_t>> blocks) {
  for (const auto& [name, count] : blocks) add_block(name, count);
}

VariableLayout& VariableLayout::add_block(const std::string& block, std::size_t count) {
  blocks_.push_back({block, {names_.size(), count}});
  for (std::size_t i = 0; i < count; ++i) add(coordinate_name(block, i));
  return *this;
}

VariableLayout& VariableLayout::add(const std::string& name) {
  if (index_.count(name)) throw DimensionError("duplicate coordinate '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  return *this;
}

std::optional<std::size_t> VariableLayout::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t VariableLayout::offset(const std::string& block) const {
  for (const auto& [name, range] : blocks_) {
    if (name == block) return range.first;
  }
  throw DimensionError("no coordinate block '" + block + "'");
}

std::size_t VariableLayout::block_size(const std::string& block) const {
  for (const auto& [name, range] : blocks_) {
    if (name == block) return range.second;
  }
  throw DimensionError("no coordinate block '" + block + "'");
}

void require_variables(const Expr& e, const VariableLayout& layout, const std::string& what) {
  for (const auto& v : free_variables(e)) {
    if (!layout.index_of(v)) throw DimensionError(what + " references '" + v + "', which is not an input here");
  }
}

CompiledExprs::CompiledExprs(const std::vector<Expr>& outputs, VariableLayout layout) : layout_(std::move(layout)) {
  std::unordered_map<const Expr::Node*, int> slot;
  // Iterative post-order traversal; deep trees from repeated substitution would overflow recursion.
  auto emit = [&](const Expr& root) -> int {
    if (auto it = slot.find(root.id()); it != slot.end()) return it->second;
    std::vector<std::pair<Expr, bool>> stack{{root, false}};
    while (!stack.empty()) {
      auto [e, expanded] = stack.back();
      stack.pop_back();
      if (slot.count(e.id())) continue;
      const bool binary = e.op() == Op::Add || e.op() == Op::Sub || e.op() == Op::Mul || e.op() == Op::Div;
      const bool leaf = e.op() == Op::Constant || e.op() == Op::Variable;
      if (!expanded && !leaf) {
        stack.push_back({e, true});
        if (binary) stack.push_back({e.rhs(), false});
        stack.push_back({e.lhs(), false});
        continue;
      }
      Instr in;
      in.op = e.op();
      in.node = e;
      if (e.op() == Op::Constant) {
        in.value = e.value();
      } else if (e.op() == Op::Variable) {
        auto idx = layout_.index_of(e.name());
        if (!idx) throw DimensionError("expression references '" + e.name() + "', which is not an input here");
        in.var = static_cast<int>(*idx);
        in.depends = true;
      } else {
        in.a = slot.at(e.lhs().id());
        in.depends = tape_[in.a].depends;
        if (binary) {
          in.b = slot.at(e.rhs().id());
          in.depends = in.depends || tape_[in.b].depends;
        }
        in.exponent = e.exponent();
      }
      slot.emplace(e.id(), static_cast<int>(tape_.size()));
      tape_.push_back(std::move(in));
    }
    return slot.at(root.id());
  };
  outputs_.reserve(outputs.size());
  for (const auto& e : outputs) outputs_.push_back(emit(e));
}

namespace {

double ipow(double u, int k) {
  if (k < 0) return 1.0 / ipow(u, -k);
  double r = 1.0;
  double b = u;
  while (k) {
    if (k & 1) r *= b;
    b *= b;
    k >>= 1;
  }
  return r;
}

struct Workspace {
  std::vector<double> val, grad, hess;
};

[[noreturn]] void non_finite(const CompiledExprs::Instr& in, double v) {
  std::ostringstream os;
  os << "non-finite intermediate (" << v << ") in subexpression " << to_string(in.node);
  throw EvaluationError(os.str());
}

}  // namespace

Derivatives CompiledExprs::evaluate(std::span<const double> point, int order) const {
  const std::size_t n = layout_.size();
  if (point.size() != n) {
    throw DimensionError("evaluation point has " + std::to_string(point.size()) + " entries, expected " +
                         std::to_string(n));
  }
  if (order < 0 || order > 2) throw Error("derivative order must be 0, 1 or 2");
  const std::size_t count = tape_.size();
  thread_local Workspace ws;
  ws.val.resize(count);
  double* val = ws.val.data();
  double* grad = nullptr;
  double* hess = nullptr;
  const std::size_t nn = n * n;
  if (order >= 1) {
    ws.grad.resize(count * n);
    grad = ws.grad.data();
  }
  if (order >= 2) {
    ws.hess.resize(count * nn);
    hess = ws.hess.data();
  }

  // Hessians hold only the upper triangle (l >= k); the lower part is mirrored on output.
  for (std::size_t i = 0; i < count; ++i) {
    const Instr& in = tape_[i];
    double* g = grad ? grad + i * n : nullptr;
    double* H = hess ? hess + i * nn : nullptr;
    const double va = in.a >= 0 ? val[in.a] : 0.0;
    const double vb = in.b >= 0 ? val[in.b] : 0.0;
    const bool da = in.a >= 0 && tape_[in.a].depends;
    const bool db = in.b >= 0 && tape_[in.b].depends;
    const double* ga = da && grad ? grad + in.a * n : nullptr;
    const double* gb = db && grad ? grad + in.b * n : nullptr;
    const double* Ha = da && hess ? hess + in.a * nn : nullptr;
    const double* Hb = db && hess ? hess + in.b * nn : nullptr;

    // g = ca*ga + cb*gb (absent terms skipped), same for H
    auto linear = [&](double ca, double cb) {
      for (std::size_t k = 0; k < n; ++k) g[k] = (ga ? ca * ga[k] : 0.0) + (gb ? cb * gb[k] : 0.0);
      if (H) {
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t l = k; l < n; ++l)
            H[k * n + l] = (Ha ? ca * Ha[k * n + l] : 0.0) + (Hb ? cb * Hb[k * n + l] : 0.0);
      }
    };
    // chain rule through a scalar function with derivatives f1, f2 of operand a
    auto unary = [&](double f1, double f2) {
      if (!std::isfinite(f1) || (H && !std::isfinite(f2))) non_finite(in, f1);
      for (std::size_t k = 0; k < n; ++k) g[k] = f1 * ga[k];
      if (H) {
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t l = k; l < n; ++l) H[k * n + l] = f1 * Ha[k * n + l] + f2 * ga[k] * ga[l];
      }
    };

    double v = 0.0;
    switch (in.op) {
      case Op::Constant: v = in.value; break;
      case Op::Variable: v = point[in.var]; break;
      case Op::Add: v = va + vb; break;
      case Op::Sub: v = va - vb; break;
      case Op::Mul: v = va * vb; break;
      case Op::Div: v = va / vb; break;
      case Op::Neg: v = -va; break;
      case Op::Pow: v = ipow(va, in.exponent); break;
      case Op::Sin: v = std::sin(va); break;
      case Op::Cos: v = std::cos(va); break;
      case Op::Tan: v = std::tan(va); break;
      case Op::Exp: v = std::exp(va); break;
      case Op::Log: v = va > 0.0 ? std::log(va) : std::numeric_limits<double>::quiet_NaN(); break;
      case Op::Sqrt: v = va >= 0.0 ? std::sqrt(va) : std::numeric_limits<double>::quiet_NaN(); break;
    }
    if (!std::isfinite(v)) non_finite(in, v);
    val[i] = v;
    if (!g || !in.depends) continue;

    switch (in.op) {
      case Op::Constant: break;
      case Op::Variable:
        for (std::size_t k = 0; k < n; ++k) g[k] = 0.0;
        g[in.var] = 1.0;
        if (H) std::fill(H, H + nn, 0.0);
        break;
      case Op::Add: linear(1.0, 1.0); break;
      case Op::Sub: linear(1.0, -1.0); break;
      case Op::Neg: linear(-1.0, 0.0); break;
      case Op::Mul:
        if (!ga || !gb) {
          linear(vb, va);
          break;
        }
        for (std::size_t k = 0; k < n; ++k) g[k] = va * gb[k] + vb * ga[k];
        if (H) {
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t l = k; l < n; ++l)
              H[k * n + l] = va * Hb[k * n + l] + vb * Ha[k * n + l] + (ga[k] * gb[l] + gb[k] * ga[l]);
        }
        break;
      case Op::Div: {
        if (!gb) {
          linear(1.0 / vb, 0.0);
          break;
        }
        for (std::size_t k = 0; k < n; ++k) g[k] = ((ga ? ga[k] : 0.0) - v * gb[k]) / vb;
        if (H) {
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t l = k; l < n; ++l)
              H[k * n + l] =
                  ((Ha ? Ha[k * n + l] : 0.0) - v * Hb[k * n + l] - (g[k] * gb[l] + gb[k] * g[l])) / vb;
        }
        break;
      }
      case Op::Pow: {
        const int k = in.exponent;
        const double f1 = k == 0 ? 0.0 : k * ipow(va, k - 1);
        const double f2 = (k == 0 || k == 1) ? 0.0 : static_cast<double>(k) * (k - 1) * ipow(va, k - 2);
        unary(f1, f2);
        break;
      }
      case Op::Sin: unary(std::cos(va), -v); break;
      case Op::Cos: unary(-std::sin(va), -v); break;
      case Op::Tan: unary(1.0 + v * v, 2.0 * v * (1.0 + v * v)); break;
      case Op::Exp: unary(v, v); break;
      case Op::Log: unary(1.0 / va, -1.0 / (va * va)); break;
      case Op::Sqrt: unary(0.5 / v, -0.25 / (v * va)); break;
    }
  }

  Derivatives out;
  const std::size_t q = outputs_.size();
  out.value.resize(static_cast<Eigen::Index>(q));
  if (order >= 1) out.jacobian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(n));
  if (order >= 2) out.hessian.assign(q, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  for (std::size_t r = 0; r < q; ++r) {
    const int i = outputs_[r];
    out.value[static_cast<Eigen::Index>(r)] = val[i];
    if (!tape_[i].depends) continue;
    if (order >= 1) {
      for (std::size_t k = 0; k < n; ++k) out.jacobian(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = grad[i * n + k];
    }
    if (order >= 2) {
      auto& M = out.hessian[r];
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = k; l < n; ++l) {
          const double h = hess[i * nn + k * n + l];
          M(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = h;
          M(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) = h;
        }
    }
  }
  return out;
}

Eigen::VectorXd CompiledExprs::values(std::span<const double> point) const { return evaluate(point, 0).value; }

std::size_t Shape::count() const {
  std::size_t c = 1;
  for (auto d : dims) c *= d;
  return c;
}

SmoothField::SmoothField(Shape shape, const std::vector<Expr>& entries, VariableLayout layout)
    : shape_(std::move(shape)), layout_(std::move(layout)), entries_(entries), compiled_(entries, layout_) {
  if (entries.size() != shape_.count()) throw DimensionError("field entry count does not match its shape");
}

SmoothField::SmoothField(Shape shape, Callable fn, VariableLayout layout)
    : shape_(std::move(shape)), layout_(std::move(layout)), callable_(std::move(fn)) {}

Derivatives SmoothField::evaluate(std::span<const double> point, int order) const {
  if (!callable_) return compiled_.evaluate(point, order);
  const Eigen::Index n = static_cast<Eigen::Index>(layout_.size());
  if (static_cast<Eigen::Index>(point.size()) != n) throw DimensionError("evaluation point has the wrong length");
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(point.data(), n);
  auto f = [&](const Eigen::VectorXd& at) {
    Eigen::VectorXd v = callable_(at);
    if (v.size() != static_cast<Eigen::Index>(shape_.count())) throw DimensionError("callable returned the wrong length");
    if (!v.allFinite()) throw EvaluationError("callable field returned a non-finite value");
    return v;
  };
  Derivatives out;
  out.exact = false;
  out.value = f(x);
  const Eigen::Index q = out.value.size();
  const double eps = std::numeric_limits<double>::epsilon();
  if (order >= 1) {
    out.tolerance = 1e-7;
    out.jacobian.resize(q, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = std::cbrt(eps) * std::max(1.0, std::abs(x[j]));
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      out.jacobian.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
  }
  if (order >= 2) {
    out.tolerance = 1e-4;
    out.hessian.assign(static_cast<std::size_t>(q), Eigen::MatrixXd::Zero(n, n));
    const double root4 = std::sqrt(std::sqrt(eps));
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = j; k < n; ++k) {
        const double hj = root4 * std::max(1.0, std::abs(x[j]));
        const double hk = root4 * std::max(1.0, std::abs(x[k]));
        auto shifted = [&](double sj, double sk) {
          Eigen::VectorXd y = x;
          y[j] += sj * hj;
          y[k] += sk * hk;
          return f(y);
        };
        const Eigen::VectorXd d = (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4.0 * hj * hk);
        for (Eigen::Index r = 0; r < q; ++r) {
          out.hessian[static_cast<std::size_t>(r)](j, k) = d[r];
          out.hessian[static_cast<std::size_t>(r)](k, j) = d[r];
        }
      }
    }
  }
  return out;
}

}  // namespace algmech
