#include "algmech/parser.hpp"

#include "algmech/error.hpp"

#include <cctype>
#include <charconv>
#include <optional>

namespace algmech {

Declarations& Declarations::block(std::string_view name, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) variables.insert(coordinate_name(name, i));
  return *this;
}

Declarations& Declarations::parameter(std::string name, double value) {
  parameters[std::move(name)] = value;
  return *this;
}

namespace {

std::optional<Op> function_op(std::string_view name) {
  if (name == "sin") return Op::Sin;
  if (name == "cos") return Op::Cos;
  if (name == "tan") return Op::Tan;
  if (name == "exp") return Op::Exp;
  if (name == "log") return Op::Log;
  if (name == "sqrt") return Op::Sqrt;
  return std::nullopt;
}

bool non_smooth(std::string_view name) {
  return name == "abs" || name == "sign" || name == "min" || name == "max" || name == "floor" || name == "ceil";
}

class Parser {
 public:
  Parser(std::string_view src, const Declarations& decl) : src_(src), decl_(decl) {}

  Expr run() {
    skip_space();
    if (at_end()) fail("empty expression");
    Expr e = expr();
    skip_space();
    if (!at_end()) fail(std::string("unexpected '") + src_[pos_] + "'");
    return e;
  }

 private:
  std::string_view src_;
  const Declarations& decl_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t line_start_ = 0;

  [[noreturn]] void fail(const std::string& msg) const { fail_at(pos_, msg); }
  [[noreturn]] void fail_at(std::size_t pos, const std::string& msg) const {
    // Column counts code points so a multi-byte minus sign occupies one column.
    std::size_t col = 1;
    for (std::size_t i = line_start_; i < pos && i < src_.size(); ++i) {
      if ((static_cast<unsigned char>(src_[i]) & 0xC0) != 0x80) ++col;
    }
    throw ParseError(line_, col, msg);
  }

  bool at_end() const { return pos_ >= src_.size(); }

  void skip_space() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(src_[pos_]))) {
      if (src_[pos_] == '\n') {
        ++line_;
        line_start_ = pos_ + 1;
      }
      ++pos_;
    }
  }

  // Accepts ASCII '-' and U+2212.
  bool accept_minus() {
    skip_space();
    if (!at_end() && src_[pos_] == '-') {
      ++pos_;
      return true;
    }
    if (src_.substr(pos_, 3) == "\xE2\x88\x92") {
      pos_ += 3;
      return true;
    }
    return false;
  }

  bool accept(char c) {
    skip_space();
    if (!at_end() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (at_end()) fail(std::string("expected '") + c + "' but input ended");
      fail(std::string("expected '") + c + "'");
    }
  }

  Expr expr() {
    Expr e = term();
    for (;;) {
      if (accept('+')) {
        e = Expr::make(Op::Add, e, term());
      } else if (accept_minus()) {
        e = Expr::make(Op::Sub, e, term());
      } else {
        return e;
      }
    }
  }

  Expr term() {
    Expr e = unary();
    for (;;) {
      if (accept('*')) {
        e = Expr::make(Op::Mul, e, unary());
      } else if (accept('/')) {
        e = Expr::make(Op::Div, e, unary());
      } else {
        return e;
      }
    }
  }

  Expr unary() {
    if (accept_minus()) return Expr::make(Op::Neg, unary());
    return factor();
  }

  Expr factor() {
    Expr b = base();
    if (accept('^')) {
      const bool paren = accept('(');
      const bool neg = accept_minus();
      skip_space();
      const std::size_t start = pos_;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      if (start == pos_) fail("expected integer exponent");
      int k = 0;
      auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, k);
      if (ec != std::errc()) fail_at(start, "exponent out of range");
      (void)ptr;
      if (paren) expect(')');
      return Expr::make(Op::Pow, b, Expr(), neg ? -k : k);
    }
    return b;
  }

  Expr number() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) ++pos_;
    if (!at_end() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t q = pos_ + 1;
      if (q < src_.size() && (src_[q] == '+' || src_[q] == '-')) ++q;
      if (q < src_.size() && std::isdigit(static_cast<unsigned char>(src_[q]))) {
        pos_ = q;
        while (!at_end() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_) fail_at(start, "malformed number");
    return literal(v);
  }

  static Expr literal(double v) {
    // Zero literals share the null node, so they compare equal to folded zeros.
    return Expr(v);
  }

  Expr base() {
    skip_space();
    if (at_end()) fail("unexpected end of input");
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      expect(')');
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (!at_end() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
      const std::string name(src_.substr(start, pos_ - start));
      skip_space();
      const bool call = !at_end() && src_[pos_] == '(';
      if (call) {
        if (non_smooth(name)) fail_at(start, "non-smooth function '" + name + "' is not supported");
        const auto op = function_op(name);
        if (!op) fail_at(start, "unknown function '" + name + "'");
        ++pos_;
        Expr arg = expr();
        if (accept(',')) fail_at(start, "function '" + name + "' takes exactly one argument");
        expect(')');
        return Expr::make(*op, arg);
      }
      if (function_op(name)) fail_at(start, "function '" + name + "' requires an argument list");
      if (decl_.variables.count(name)) return Expr::variable(name);
      if (auto it = decl_.parameters.find(name); it != decl_.parameters.end()) return literal(it->second);
      fail_at(start, "unknown identifier '" + name + "'");
    }
    fail(std::string("unexpected '") + c + "'");
  }
};

}  // namespace

Expr parse(std::string_view source, const Declarations& declarations) {
  return Parser(source, declarations).run();
}

}  // namespace algmech
