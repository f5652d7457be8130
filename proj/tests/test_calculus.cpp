#include "algmech/error.hpp"
#include "algmech/field.hpp"
#include "algmech/parser.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace algmech;

namespace {

Declarations xyz(std::size_t m, std::size_t n) {
  Declarations d;
  d.block("x", m).block("y", n).block("z", n);
  return d;
}

Derivatives eval(const Expr& e, const VariableLayout& layout, const std::vector<double>& pt, int order) {
  return CompiledExprs({e}, layout).evaluate(pt, order);
}

}  // namespace

TEST(Parser, RigidBodySecondOrderLagrangian) {
  const Expr L = parse("0.5*(z1^2+z2^2+z3^2)", xyz(0, 3));
  EXPECT_EQ(free_variables(L), (std::set<std::string>{"z1", "z2", "z3"}));
  EXPECT_DOUBLE_EQ(evaluate(L, {{"z1", 1.0}, {"z2", 2.0}, {"z3", 3.0}}), 7.0);
}

TEST(Parser, TrailingOperatorReportsColumn) {
  try {
    parse("y1*", xyz(0, 1));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_EQ(e.column(), 4u);
  }
}

TEST(Parser, UnknownIdentifier) {
  Declarations d;
  d.block("q", 4);
  try {
    parse("sin(q7)", d);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("q7"), std::string::npos);
  }
}

TEST(Parser, RejectsNonSmoothAndNonIntegerPowers) {
  EXPECT_THROW(parse("abs(y1)", xyz(0, 1)), ParseError);
  EXPECT_THROW(parse("y1^0.5", xyz(0, 1)), ParseError);
}

TEST(Parser, ParametersBecomeConstants) {
  Declarations d = xyz(1, 1);
  d.parameter("k", 2.5);
  const Expr e = parse("k*y1", d);
  EXPECT_EQ(free_variables(e), std::set<std::string>{"y1"});
  EXPECT_DOUBLE_EQ(evaluate(e, {{"y1", 2.0}}), 5.0);
}

TEST(Parser, UnaryMinusAndPrecedence) {
  const Expr e = parse("-y1^2 + 2*y1 - 3/y1", xyz(0, 1));
  EXPECT_DOUBLE_EQ(evaluate(e, {{"y1", 3.0}}), -9.0 + 6.0 - 1.0);
}

TEST(Parser, PrintRoundTrip) {
  const Declarations d = xyz(2, 2);
  for (const char* src : {"0.5*(z1^2+z2^2)", "sin(x1)*cos(x2) - y1/y2", "exp(-y1^2)*log(1+x1^2)", "sqrt(2+x2^2)^3",
                          "tan(x1) - (y1 - y2)*(z1 + 3)"}) {
    const Expr e = parse(src, d);
    EXPECT_TRUE(structurally_equal(parse(to_string(e), d), e)) << src << " printed as " << to_string(e);
  }
}

TEST(Derivatives, ProductRule) {
  const Expr e = parse("y1*y2", xyz(0, 2));
  const Derivatives d = eval(e, VariableLayout{{"y", 2}}, {2.0, 3.0}, 1);
  EXPECT_DOUBLE_EQ(d.value[0], 6.0);
  EXPECT_DOUBLE_EQ(d.jacobian(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(d.jacobian(0, 1), 2.0);
}

TEST(Derivatives, QuadraticHessian) {
  const Expr e = parse("0.5*z1^2", xyz(0, 1));
  const Derivatives d = eval(e, VariableLayout{{"z", 1}}, {5.0}, 2);
  EXPECT_DOUBLE_EQ(d.hessian[0](0, 0), 1.0);
}

TEST(Derivatives, AgreeWithCentralDifferences) {
  const Declarations decl = xyz(2, 2);
  const VariableLayout layout{{"x", 2}, {"y", 2}, {"z", 2}};
  const std::vector<std::string> sources{"sin(x1)*y1^3 + exp(x2*z2)", "log(2 + x1^2)*cos(y2 - z1)", "sqrt(3 + y1^2)/(2 + tan(x2/4))",
                                         "(z1*z2 - y1)^3 + x1*x2*y2"};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& src : sources) {
    const CompiledExprs f({parse(src, decl)}, layout);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> pt(6);
      for (auto& v : pt) v = u(rng);
      const Derivatives d = f.evaluate(pt, 2);
      for (std::size_t i = 0; i < 6; ++i) {
        const double h = 1e-6;
        auto plus = pt, minus = pt;
        plus[i] += h;
        minus[i] -= h;
        const double fd = (f.values(plus)[0] - f.values(minus)[0]) / (2 * h);
        const double exact = d.jacobian(0, static_cast<Eigen::Index>(i));
        EXPECT_LT(std::abs(fd - exact), 1e-6 * std::max(1.0, std::abs(exact))) << src;
      }
      EXPECT_EQ((d.hessian[0] - d.hessian[0].transpose()).norm(), 0.0) << src;
    }
  }
}

TEST(Derivatives, SymbolicAndForwardModeAgree) {
  const Declarations decl = xyz(1, 1);
  const Expr e = parse("sin(x1*y1)^2 + y1*exp(z1)", decl);
  const VariableLayout layout{{"x", 1}, {"y", 1}, {"z", 1}};
  const std::vector<double> pt{0.3, -0.7, 0.2};
  const Derivatives d = eval(e, layout, pt, 1);
  const std::map<std::string, double> at{{"x1", pt[0]}, {"y1", pt[1]}, {"z1", pt[2]}};
  EXPECT_NEAR(evaluate(differentiate(e, "x1"), at), d.jacobian(0, 0), 1e-14);
  EXPECT_NEAR(evaluate(differentiate(e, "y1"), at), d.jacobian(0, 1), 1e-14);
  EXPECT_NEAR(evaluate(differentiate(e, "z1"), at), d.jacobian(0, 2), 1e-14);
}

TEST(Derivatives, NonFiniteIntermediateNamesSubexpression) {
  const Expr e = parse("log(y1)", xyz(0, 1));
  try {
    eval(e, VariableLayout{{"y", 1}}, {-1.0}, 0);
    FAIL() << "expected an evaluation error";
  } catch (const EvaluationError& err) {
    EXPECT_NE(std::string(err.what()).find("log"), std::string::npos);
  }
  EXPECT_THROW(eval(parse("1/y1", xyz(0, 1)), VariableLayout{{"y", 1}}, {0.0}, 0), EvaluationError);
}

TEST(SmoothField, ShapesAndCallables) {
  const Declarations decl = xyz(0, 2);
  SmoothField f(Shape::matrix(2, 2), {parse("y1", decl), parse("y2", decl), parse("y1*y2", decl), Expr(1.0)}, VariableLayout{{"y", 2}});
  const std::vector<double> pt{2.0, 3.0};
  const Derivatives d = f.evaluate(pt, 1);
  EXPECT_EQ(d.value.size(), 4);
  EXPECT_DOUBLE_EQ(d.value[2], 6.0);
  EXPECT_TRUE(d.exact);

  SmoothField g(Shape::scalar(), [](const Eigen::VectorXd& v) { return Eigen::VectorXd::Constant(1, v.squaredNorm()); },
                VariableLayout{{"y", 2}});
  const Derivatives dg = g.evaluate(pt, 2);
  EXPECT_FALSE(dg.exact);
  EXPECT_NEAR(dg.jacobian(0, 1), 6.0, dg.tolerance);
  EXPECT_NEAR(dg.hessian[0](0, 0), 2.0, 1e-4);
}

TEST(Expr, SubstitutionAndSimplification) {
  const Declarations decl = xyz(0, 1);
  const Expr e = parse("y1^2 + z1", decl);
  const Expr s = substitute(e, {{"z1", parse("2*y1", decl)}});
  EXPECT_DOUBLE_EQ(evaluate(s, {{"y1", 3.0}}), 15.0);
  EXPECT_TRUE(differentiate(parse("3*y1", decl), "z1").is_constant(0.0));
}
