#include "algmech/algebroid.hpp"
#include "algmech/error.hpp"
#include "algmech/parser.hpp"
#include "algmech/problem_file.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace algmech;

namespace {

std::vector<double> so3_array() {
  std::vector<double> c(27, 0.0);
  auto set = [&](std::size_t C, std::size_t A, std::size_t B, double v) {
    c[(C * 3 + A) * 3 + B] = v;
    c[(C * 3 + B) * 3 + A] = -v;
  };
  set(2, 0, 1, 1.0);
  set(0, 1, 2, 1.0);
  set(1, 2, 0, 1.0);
  return c;
}

}  // namespace

TEST(Algebroid, So3PassesValidation) {
  const ValidationReport rep = validate_chart(so3(), sample_box(0, 10, -1, 1, 3), 1e-10);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.max_residual(), 0.0);
  EXPECT_EQ(rep.samples, 10u);
}

TEST(Algebroid, PerturbedRawSo3ConstantFailsJacobi) {
  std::vector<double> c = so3_array();
  EXPECT_TRUE(validate_structure_array(3, c, 1e-10).pass);
  c[(2 * 3 + 0) * 3 + 1] = 1.0 + 1e-3;  // C^3_12 alone
  const ValidationReport rep = validate_structure_array(3, c, 1e-10);
  EXPECT_FALSE(rep.pass);
  EXPECT_GE(rep.jacobi.max, 1e-3 - 1e-15);
  EXPECT_FALSE(rep.jacobi.location.empty());
}

TEST(Algebroid, PerturbedZeroConstantFailsJacobiInChart) {
  StructureTable t(3);
  t.set(2, 0, 1, Expr(1.0));
  t.set(0, 1, 2, Expr(1.0));
  t.set(1, 2, 0, Expr(1.0));
  t.set(0, 0, 1, Expr(1e-3));
  const AlgebroidChart chart("so3_perturbed", 0, 3, {}, t);
  const ValidationReport rep = validate_chart(chart, sample_box(0, 10, -1, 1, 0), 1e-10);
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.jacobi.max, 1e-3, 1e-12);
  EXPECT_EQ(rep.antisymmetry.max, 0.0);
}

TEST(Algebroid, TangentBundleResidualsVanish) {
  const AlgebroidChart tb = tangent_bundle(2);
  const ValidationReport rep = validate_chart(tb, sample_box(2, 20, -3, 3, 1), 1e-10);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.max_residual(), 0.0);
  const ChartPoint p = tb.at(Eigen::Vector2d(0.4, -1.0));
  EXPECT_EQ(p.rho, Eigen::Matrix2d::Identity());
  for (double v : p.C.c) EXPECT_EQ(v, 0.0);
}

TEST(Algebroid, AllBuiltinsPassOnHundredSamples) {
  const std::vector<AlgebroidChart> charts{
      tangent_bundle(3), so3(), se2(), elroy_beanie(1.0, 1.0), elroy_beanie(2.0, 5.0),
      builtin_chart("action_algebroid", {{"m", 2}, {"n", 1}, {"generators", nlohmann::json::array({nlohmann::json::array({"-x2", "x1"})})}}),
      builtin_chart("atiyah_trivial", {{"m", 1},
                                       {"n_g", 3},
                                       {"constants", {{{"A", 1}, {"B", 2}, {"C_index", 3}, {"value", 1.0}},
                                                      {{"A", 2}, {"B", 3}, {"C_index", 1}, {"value", 1.0}},
                                                      {{"A", 3}, {"B", 1}, {"C_index", 2}, {"value", 1.0}}}},
                                       {"connection", {{"sin(x1)"}, {"0"}, {"cos(x1)"}}}})};
  for (const auto& chart : charts) {
    const ValidationReport rep = validate_chart(chart, sample_box(chart.base_dim(), 100, -1, 1, 11), 1e-10);
    EXPECT_TRUE(rep.pass) << chart.name() << " residual " << rep.max_residual() << " at " << rep.jacobi.location;
  }
}

TEST(Algebroid, ElroyStructureFunctions) {
  const AlgebroidChart e = elroy_beanie(1.0, 1.0);
  ASSERT_EQ(e.base_dim(), 1u);
  ASSERT_EQ(e.fiber_rank(), 4u);
  const ChartPoint p = e.at(Eigen::VectorXd::Constant(1, 0.7));
  EXPECT_NEAR(p.C(2, 0, 1), -std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(p.C(2, 1, 3), -1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(p.rho(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(p.C(2, 1, 0), std::sqrt(0.5), 1e-15);
}

TEST(Algebroid, LieAlgebraIsLeviCivita) {
  const ChartPoint p = so3().at(Eigen::VectorXd(0));
  EXPECT_EQ(p.rho.size(), 0);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 3; ++c) {
        const int eps = static_cast<int>((static_cast<int>(b) - static_cast<int>(a)) * (static_cast<int>(c) - static_cast<int>(a)) *
                                         (static_cast<int>(c) - static_cast<int>(b))) / 2;
        EXPECT_EQ(p.C(c, a, b), static_cast<double>(eps)) << a << b << c;
      }
}

TEST(Algebroid, AdmissibilityResiduals) {
  const auto tb = tangent_bundle(2);
  EXPECT_EQ(admissibility_residual(tb, Eigen::Vector2d(5, 6), Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 2)).norm(), 0.0);
  EXPECT_EQ(admissibility_residual(so3(), Eigen::VectorXd(0), Eigen::Vector3d(1, 2, 3), Eigen::VectorXd(0)).size(), 0);
  const auto e = elroy_beanie(1.0, 1.0);
  Eigen::Vector4d y(1, 0, 0, 0);
  EXPECT_NEAR(admissibility_residual(e, Eigen::VectorXd::Constant(1, 0.2), y, Eigen::VectorXd::Constant(1, std::sqrt(2.0)))[0], 0.0,
              1e-15);
  EXPECT_THROW(admissibility_residual(tb, Eigen::Vector2d(0, 0), Eigen::Vector3d(0, 0, 0), Eigen::Vector2d(0, 0)), DimensionError);
}

TEST(Algebroid, StructureTableIsAntisymmetricByConstruction) {
  StructureTable t(3);
  t.set(0, 2, 1, Expr(4.0));
  EXPECT_TRUE(t.get(0, 1, 2).is_constant(-4.0));
  EXPECT_TRUE(t.get(0, 2, 2).is_constant(0.0));
}

TEST(Algebroid, NonFiniteSampleIsNamed) {
  Declarations d;
  d.block("x", 1);
  const AlgebroidChart bad("bad", 1, 1, {parse("log(x1)", d)}, StructureTable(1));
  std::vector<Eigen::VectorXd> samples{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -1.0)};
  try {
    validate_chart(bad, samples, 1e-8);
    FAIL() << "expected an evaluation error";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
}

TEST(Algebroid, ValidationIsDeterministic) {
  const auto samples = sample_box(2, 20, -1, 1, 42);
  EXPECT_EQ(samples, sample_box(2, 20, -1, 1, 42));
  const auto chart = builtin_chart("action_algebroid", {{"m", 2}, {"n", 1}, {"generators", nlohmann::json::array({nlohmann::json::array({"x2^2", "x1"})})}});
  const auto a = validate_chart(chart, samples, 1e-10);
  const auto b = validate_chart(chart, samples, 1e-10);
  EXPECT_EQ(a.max_residual(), b.max_residual());
  EXPECT_EQ(a.jacobi.location, b.jacobi.location);
}

TEST(Algebroid, CustomChartConflictingEntriesPointAtEntry) {
  nlohmann::json doc = {{"mode", "validate"},
                        {"algebroid",
                         {{"custom",
                           {{"m", 0},
                            {"n", 2},
                            {"rho", nlohmann::json::array()},
                            {"C", {{{"A", 1}, {"B", 2}, {"C_index", 1}, {"expr", "1"}}, {{"A", 2}, {"B", 1}, {"C_index", 1}, {"expr", "1"}}}}}}}}};
  try {
    parse_problem(doc);
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.pointer(), "/algebroid/custom/C/1");
  }
  doc["algebroid"]["custom"]["C"][1]["expr"] = "-1";
  EXPECT_NO_THROW(parse_problem(doc));
}

TEST(Algebroid, BuiltinByNameMatchesFactories) {
  const AlgebroidChart a = builtin_chart("tangent_bundle", {{"m", 2}});
  EXPECT_EQ(a.base_dim(), 2u);
  const AlgebroidChart e = builtin_chart("elroy_beanie", {{"I1", 1.0}, {"I2", 1.0}});
  EXPECT_NEAR(e.at(Eigen::VectorXd::Zero(1)).C(2, 0, 1), -std::sqrt(0.5), 1e-15);
  EXPECT_THROW(builtin_chart("no_such_chart", nlohmann::json::object()), Error);
}
