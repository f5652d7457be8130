#include "algmech/expr.hpp"

#include "algmech/error.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <unordered_map>

namespace algmech {

namespace {

std::shared_ptr<const Expr::Node> constant_node(double v) {
  auto n = std::make_shared<Expr::Node>();
  n->op = Op::Constant;
  n->value = v;
  return n;
}

bool is_unary_function(Op op) {
  return op == Op::Sin || op == Op::Cos || op == Op::Tan || op == Op::Exp || op == Op::Log || op == Op::Sqrt;
}

double apply_unary(Op op, double v) {
  switch (op) {
    case Op::Sin: return std::sin(v);
    case Op::Cos: return std::cos(v);
    case Op::Tan: return std::tan(v);
    case Op::Exp: return std::exp(v);
    case Op::Log: return v > 0.0 ? std::log(v) : std::nan("");
    case Op::Sqrt: return v >= 0.0 ? std::sqrt(v) : std::nan("");
    default: throw Error("not a unary function");
  }
}

const char* function_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Tan: return "tan";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    default: return "?";
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// A null node is the constant zero.
Expr::Expr() = default;

Expr::Expr(double value) {
  if (value != 0.0) node_ = constant_node(value);
}

Expr Expr::variable(std::string name) {
  auto n = std::make_shared<Node>();
  n->op = Op::Variable;
  n->name = std::move(name);
  return Expr(std::shared_ptr<const Node>(std::move(n)));
}

Expr Expr::make(Op op, Expr a, Expr b, int exponent) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  n->exponent = exponent;
  return Expr(std::shared_ptr<const Node>(std::move(n)));
}

Op Expr::op() const { return node_ ? node_->op : Op::Constant; }
double Expr::value() const { return node_ ? node_->value : 0.0; }
int Expr::exponent() const { return node_ ? node_->exponent : 0; }
const std::string& Expr::name() const {
  static const std::string empty;
  return node_ ? node_->name : empty;
}
const Expr& Expr::lhs() const { return node_->a; }
const Expr& Expr::rhs() const { return node_->b; }

Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return Expr(a.value() + b.value());
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  if (b.op() == Op::Neg) return a - b.lhs();
  return Expr::make(Op::Add, a, b);
}

Expr operator-(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return Expr(a.value() - b.value());
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return -b;
  if (b.op() == Op::Neg) return a + b.lhs();
  return Expr::make(Op::Sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant()) return Expr(a.value() * b.value());
  if (a.is_constant(0.0) || b.is_constant(0.0)) return Expr();
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  if (a.is_constant(-1.0)) return -b;
  if (b.is_constant(-1.0)) return -a;
  if (a.op() == Op::Neg && b.op() == Op::Neg) return a.lhs() * b.lhs();
  if (a.op() == Op::Neg) return -(a.lhs() * b);
  if (b.op() == Op::Neg) return -(a * b.lhs());
  if (a.is_constant() && b.op() == Op::Mul && b.lhs().is_constant()) return Expr(a.value() * b.lhs().value()) * b.rhs();
  return Expr::make(Op::Mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
  if (a.is_constant() && b.is_constant() && b.value() != 0.0) return Expr(a.value() / b.value());
  if (a.is_constant(0.0) && !b.is_constant(0.0)) return Expr();
  if (b.is_constant(1.0)) return a;
  if (b.is_constant(-1.0)) return -a;
  if (a.op() == Op::Neg) return -(a.lhs() / b);
  if (b.is_constant() && b.value() != 0.0 && a.op() == Op::Mul && a.lhs().is_constant()) {
    return Expr(a.lhs().value() / b.value()) * a.rhs();
  }
  return Expr::make(Op::Div, a, b);
}

Expr operator-(const Expr& a) {
  if (a.is_constant()) return Expr(-a.value());
  if (a.op() == Op::Neg) return a.lhs();
  return Expr::make(Op::Neg, a);
}

Expr& operator+=(Expr& a, const Expr& b) { return a = a + b; }
Expr& operator-=(Expr& a, const Expr& b) { return a = a - b; }

Expr pow(const Expr& a, int k) {
  if (k == 0) return Expr(1.0);
  if (k == 1) return a;
  if (a.is_constant()) {
    const double v = std::pow(a.value(), k);
    if (std::isfinite(v)) return Expr(v);
  }
  if (a.op() == Op::Pow) return pow(a.lhs(), a.exponent() * k);
  return Expr::make(Op::Pow, a, Expr(), k);
}

Expr apply(Op unary, const Expr& a) {
  if (!is_unary_function(unary)) throw Error("apply: not a unary function");
  if (a.is_constant()) {
    const double v = apply_unary(unary, a.value());
    if (std::isfinite(v)) return Expr(v);
  }
  return Expr::make(unary, a);
}

Expr sin(const Expr& a) { return apply(Op::Sin, a); }
Expr cos(const Expr& a) { return apply(Op::Cos, a); }
Expr tan(const Expr& a) { return apply(Op::Tan, a); }
Expr exp(const Expr& a) { return apply(Op::Exp, a); }
Expr log(const Expr& a) { return apply(Op::Log, a); }
Expr sqrt(const Expr& a) { return apply(Op::Sqrt, a); }

Expr differentiate(const Expr& e, std::string_view var) {
  std::unordered_map<const Expr::Node*, Expr> memo;
  std::function<Expr(const Expr&)> d = [&](const Expr& f) -> Expr {
    if (auto it = memo.find(f.id()); it != memo.end()) return it->second;
    Expr r;
    switch (f.op()) {
      case Op::Constant: r = Expr(); break;
      case Op::Variable: r = Expr(f.name() == var ? 1.0 : 0.0); break;
      case Op::Add: r = d(f.lhs()) + d(f.rhs()); break;
      case Op::Sub: r = d(f.lhs()) - d(f.rhs()); break;
      case Op::Mul: r = d(f.lhs()) * f.rhs() + f.lhs() * d(f.rhs()); break;
      case Op::Div: {
        const Expr da = d(f.lhs());
        const Expr db = d(f.rhs());
        r = da / f.rhs() - f.lhs() * db / pow(f.rhs(), 2);
        break;
      }
      case Op::Neg: r = -d(f.lhs()); break;
      case Op::Pow: r = Expr(static_cast<double>(f.exponent())) * pow(f.lhs(), f.exponent() - 1) * d(f.lhs()); break;
      case Op::Sin: r = cos(f.lhs()) * d(f.lhs()); break;
      case Op::Cos: r = -(sin(f.lhs()) * d(f.lhs())); break;
      case Op::Tan: r = d(f.lhs()) / pow(cos(f.lhs()), 2); break;
      case Op::Exp: r = f * d(f.lhs()); break;
      case Op::Log: r = d(f.lhs()) / f.lhs(); break;
      case Op::Sqrt: r = d(f.lhs()) / (Expr(2.0) * f); break;
    }
    memo.emplace(f.id(), r);
    return r;
  };
  return d(e);
}

Expr substitute(const Expr& e, const std::map<std::string, Expr>& replacements) {
  std::unordered_map<const Expr::Node*, Expr> memo;
  std::function<Expr(const Expr&)> s = [&](const Expr& f) -> Expr {
    if (auto it = memo.find(f.id()); it != memo.end()) return it->second;
    Expr r;
    switch (f.op()) {
      case Op::Constant: r = f; break;
      case Op::Variable: {
        auto it = replacements.find(f.name());
        r = it == replacements.end() ? f : it->second;
        break;
      }
      case Op::Add: r = s(f.lhs()) + s(f.rhs()); break;
      case Op::Sub: r = s(f.lhs()) - s(f.rhs()); break;
      case Op::Mul: r = s(f.lhs()) * s(f.rhs()); break;
      case Op::Div: r = s(f.lhs()) / s(f.rhs()); break;
      case Op::Neg: r = -s(f.lhs()); break;
      case Op::Pow: r = pow(s(f.lhs()), f.exponent()); break;
      default: r = apply(f.op(), s(f.lhs())); break;
    }
    memo.emplace(f.id(), r);
    return r;
  };
  return s(e);
}

std::string to_string(const Expr& e) {
  switch (e.op()) {
    case Op::Constant:
      return e.value() < 0.0 ? "(-" + format_number(-e.value()) + ")" : format_number(e.value());
    case Op::Variable: return e.name();
    case Op::Add: return "(" + to_string(e.lhs()) + "+" + to_string(e.rhs()) + ")";
    case Op::Sub: return "(" + to_string(e.lhs()) + "-" + to_string(e.rhs()) + ")";
    case Op::Mul: return "(" + to_string(e.lhs()) + "*" + to_string(e.rhs()) + ")";
    case Op::Div: return "(" + to_string(e.lhs()) + "/" + to_string(e.rhs()) + ")";
    case Op::Neg: return "(-" + to_string(e.lhs()) + ")";
    case Op::Pow: {
      const std::string k = e.exponent() < 0 ? "(" + std::to_string(e.exponent()) + ")" : std::to_string(e.exponent());
      return "(" + to_string(e.lhs()) + "^" + k + ")";
    }
    default: return std::string(function_name(e.op())) + "(" + to_string(e.lhs()) + ")";
  }
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.id() == b.id()) return true;
  if (a.op() != b.op()) return false;
  switch (a.op()) {
    case Op::Constant: return a.value() == b.value();
    case Op::Variable: return a.name() == b.name();
    case Op::Pow: return a.exponent() == b.exponent() && structurally_equal(a.lhs(), b.lhs());
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: return structurally_equal(a.lhs(), b.lhs()) && structurally_equal(a.rhs(), b.rhs());
    default: return structurally_equal(a.lhs(), b.lhs());
  }
}

namespace {

template <class Visit>
void walk_unique(const Expr& e, Visit&& visit) {
  std::unordered_map<const Expr::Node*, bool> seen;
  std::function<void(const Expr&)> rec = [&](const Expr& f) {
    if (!seen.emplace(f.id(), true).second) return;
    visit(f);
    switch (f.op()) {
      case Op::Constant:
      case Op::Variable: return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: rec(f.lhs()); rec(f.rhs()); return;
      default: rec(f.lhs()); return;
    }
  };
  rec(e);
}

}  // namespace

std::set<std::string> free_variables(const Expr& e) {
  std::set<std::string> out;
  walk_unique(e, [&](const Expr& f) {
    if (f.op() == Op::Variable) out.insert(f.name());
  });
  return out;
}

std::size_t node_count(const Expr& e) {
  std::size_t n = 0;
  walk_unique(e, [&](const Expr&) { ++n; });
  return n;
}

double evaluate(const Expr& e, const std::map<std::string, double>& values) {
  switch (e.op()) {
    case Op::Constant: return e.value();
    case Op::Variable: {
      auto it = values.find(e.name());
      if (it == values.end()) throw EvaluationError("no value for variable '" + e.name() + "'");
      return it->second;
    }
    case Op::Add: return evaluate(e.lhs(), values) + evaluate(e.rhs(), values);
    case Op::Sub: return evaluate(e.lhs(), values) - evaluate(e.rhs(), values);
    case Op::Mul: return evaluate(e.lhs(), values) * evaluate(e.rhs(), values);
    case Op::Div: return evaluate(e.lhs(), values) / evaluate(e.rhs(), values);
    case Op::Neg: return -evaluate(e.lhs(), values);
    case Op::Pow: return std::pow(evaluate(e.lhs(), values), e.exponent());
    default: return apply_unary(e.op(), evaluate(e.lhs(), values));
  }
}

std::string coordinate_name(std::string_view block, std::size_t index) {
  return std::string(block) + std::to_string(index + 1);
}

std::vector<Expr> coordinates(std::string_view block, std::size_t count) {
  std::vector<Expr> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(Expr::variable(coordinate_name(block, i)));
  return out;
}

Expr dot(const std::vector<Expr>& a, const std::vector<Expr>& b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  Expr s;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace algmech
