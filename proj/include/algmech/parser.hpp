#pragma once

#include "algmech/expr.hpp"

#include <map>
#include <set>
#include <string>
#include <string_view>

namespace algmech {

/// Names an expression may reference: coordinates as variables, parameters folded to constants.
struct Declarations {
  std::set<std::string> variables;
  std::map<std::string, double> parameters;

  /// Adds name1..name<count>.
  Declarations& block(std::string_view name, std::size_t count);
  Declarations& parameter(std::string name, double value);
};

/// Grammar:
///   expr   := term (("+" | "-") term)*
///   term   := unary (("*" | "/") unary)*
///   unary  := "-" unary | factor
///   factor := base ("^" integer | "^" "(" integer ")")?
///   base   := number | identifier | func "(" expr ")" | "(" expr ")"
/// The tree is built verbatim, without folding, so printing and re-parsing is stable.
Expr parse(std::string_view source, const Declarations& declarations);

}  // namespace algmech
