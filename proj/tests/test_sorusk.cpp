#include "algmech/error.hpp"
#include "algmech/linalg.hpp"
#include "algmech/mechanics.hpp"
#include "algmech/parser.hpp"
#include "algmech/solve.hpp"
#include "algmech/sorusk.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace algmech;

namespace {

Declarations decl(std::size_t m, std::size_t n) {
  Declarations d;
  d.block("x", m).block("y", n).block("z", n);
  return d;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

PontryaginState random_state(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n) {
  return {random_vec(rng, m), random_vec(rng, n), random_vec(rng, n), random_vec(rng, n), random_vec(rng, n)};
}

SecondOrderProblem rigid_body() { return SecondOrderProblem(so3(), parse("0.5*(z1^2 + z2^2 + z3^2)", decl(0, 3))); }

}  // namespace

TEST(Pontryagin, HamiltonianExamples) {
  const SecondOrderProblem prob = rigid_body();
  std::mt19937_64 rng(1);
  const PontryaginState s = random_state(rng, 0, 3);
  EXPECT_NEAR(pontryagin_hamiltonian(prob, s), s.pbar.dot(s.z) + s.p.dot(s.y) - 0.5 * s.z.squaredNorm(), 1e-15);
  PontryaginState zero{Eigen::VectorXd(0), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3),
                       Eigen::VectorXd::Zero(3)};
  EXPECT_EQ(pontryagin_hamiltonian(prob, zero), 0.0);
}

TEST(Pontryagin, FlattenRoundTrip) {
  std::mt19937_64 rng(4);
  const PontryaginState s = random_state(rng, 2, 3);
  const PontryaginState t = PontryaginState::unflatten(s.flatten(), 2, 3, 3);
  EXPECT_EQ(t.flatten(), s.flatten());
  EXPECT_THROW(PontryaginState::unflatten(Eigen::VectorXd::Zero(5), 2, 3, 3), DimensionError);
}

TEST(Presymplectic, AbelianChartIsCanonical) {
  const SecondOrderProblem prob(tangent_bundle(2), parse("0.5*(z1^2 + z2^2)", decl(2, 2)));
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd om = presymplectic_matrix(prob, random_state(rng, 2, 2));
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(10, 10);
  expected.block(0, 4, 4, 4) = Eigen::MatrixXd::Identity(4, 4);
  expected.block(4, 0, 4, 4) = -Eigen::MatrixXd::Identity(4, 4);
  EXPECT_EQ(om, expected);
}

TEST(Presymplectic, So3BracketBlock) {
  const SecondOrderProblem prob = rigid_body();
  PontryaginState s{Eigen::VectorXd(0), Eigen::Vector3d(0.1, 0.2, 0.3), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1),
                    Eigen::Vector3d::Zero()};
  const Eigen::MatrixXd om = presymplectic_matrix(prob, s);
  EXPECT_EQ(om(0, 1), 1.0);
  EXPECT_EQ(om(1, 0), -1.0);
  EXPECT_EQ((om + om.transpose()).norm(), 0.0);
}

TEST(Presymplectic, KernelDimensionIsFiberRank) {
  std::mt19937_64 rng(3);
  for (const auto& prob : {rigid_body(), SecondOrderProblem(tangent_bundle(2), parse("z1^2 + x1*z2^2", decl(2, 2)))}) {
    const auto n = static_cast<Eigen::Index>(prob.fiber_rank());
    const Eigen::MatrixXd om = presymplectic_matrix(prob, random_state(rng, static_cast<Eigen::Index>(prob.base_dim()), n));
    EXPECT_EQ(null_space(om, 1e-12).cols(), n);
  }
}

TEST(ConstraintStep, SymplecticFormAdmitsEverything) {
  Eigen::MatrixXd om = Eigen::MatrixXd::Zero(4, 4);
  om.block(0, 2, 2, 2) = Eigen::Matrix2d::Identity();
  om.block(2, 0, 2, 2) = -Eigen::Matrix2d::Identity();
  const ConstraintStep s = constraint_step(om, Eigen::Vector4d(1, -2, 3, 4), Eigen::MatrixXd::Identity(4, 4), 1e-12);
  EXPECT_EQ(s.kernel_dim, 0u);
  EXPECT_TRUE(s.solvable);
}

TEST(ConstraintStep, KernelOfTheSecondOrderForm) {
  const SecondOrderProblem prob = rigid_body();
  std::mt19937_64 rng(6);
  const PontryaginState st = random_state(rng, 0, 3);
  const ConstraintStep s =
      constraint_step(presymplectic_matrix(prob, st), hamiltonian_differential(prob, st), Eigen::MatrixXd::Identity(15, 15), 1e-12);
  EXPECT_EQ(s.kernel_dim, 3u);
  // The kernel pairs dH with the z-slot: pbar - dL/dz.
  EXPECT_LT((s.values.cwiseAbs() - (st.pbar - st.z).cwiseAbs()).norm(), 1e-14);
}

TEST(ConstraintAlgorithm, RigidBodyStabilizesAfterOneLevel) {
  const SecondOrderProblem prob = rigid_body();
  std::mt19937_64 rng(7);
  const ConstraintChainReport rep = run_constraint_algorithm(prob, random_state(rng, 0, 3), 6);
  ASSERT_GE(rep.levels.size(), 2u);
  EXPECT_EQ(rep.levels[0].kernel_dim, 3u);
  ASSERT_EQ(rep.levels[0].new_constraints.size(), 3u);
  EXPECT_TRUE(rep.stabilized);
  EXPECT_TRUE(rep.consistent);
  EXPECT_EQ(rep.nontrivial_levels(), 1u);
  for (int trial = 0; trial < 10; ++trial) {
    const PontryaginState s = random_state(rng, 0, 3);
    std::map<std::string, double> at;
    for (int a = 0; a < 3; ++a) {
      at["y" + std::to_string(a + 1)] = s.y[a];
      at["z" + std::to_string(a + 1)] = s.z[a];
      at["p" + std::to_string(a + 1)] = s.p[a];
      at["pbar" + std::to_string(a + 1)] = s.pbar[a];
    }
    for (int a = 0; a < 3; ++a) {
      EXPECT_NEAR(evaluate(rep.levels[0].new_constraints[static_cast<std::size_t>(a)], at), s.pbar[a] - s.z[a], 1e-14);
    }
  }
}

TEST(ConstraintAlgorithm, DegenerateLagrangianContinuesPastFirstLevel) {
  const SecondOrderProblem prob(lie_algebra(2, {}, "abelian2"), parse("0.5*z2^2", decl(0, 2)));
  std::mt19937_64 rng(8);
  const ConstraintChainReport rep = run_constraint_algorithm(prob, random_state(rng, 0, 2), 8);
  ASSERT_GE(rep.levels.size(), 2u);
  EXPECT_FALSE(rep.levels[1].new_constraints.empty());
  EXPECT_GE(rep.nontrivial_levels(), 2u);
  std::set<std::string> vars;
  for (const auto& c : rep.levels[1].new_constraints)
    for (const auto& v : free_variables(c)) vars.insert(v);
  EXPECT_TRUE(vars.count("p1")) << "secondary constraint should involve p1 = dL/dy1";
}

TEST(ConstraintAlgorithm, SymplecticInputHasNoLevels) {
  PresymplecticSystem sys;
  sys.layout = VariableLayout{{"q", 1}, {"p", 1}};
  sys.omega = [](const Eigen::VectorXd&) {
    Eigen::MatrixXd om(2, 2);
    om << 0, 1, -1, 0;
    return om;
  };
  sys.anchor = [](const Eigen::VectorXd&) { return Eigen::MatrixXd(Eigen::MatrixXd::Identity(2, 2)); };
  Declarations d;
  d.block("q", 1).block("p", 1);
  sys.dH = {parse("q1", d), parse("p1", d)};
  const ConstraintChainReport rep = run_constraint_algorithm(sys, Eigen::Vector2d(0.3, 0.4), 4);
  EXPECT_TRUE(rep.stabilized);
  EXPECT_EQ(rep.nontrivial_levels(), 0u);
  EXPECT_TRUE(rep.constraints.empty());
}

TEST(ConstraintAlgorithm, LevelLimitFlagsUnstabilized) {
  const SecondOrderProblem prob(lie_algebra(2, {}, "abelian2"), parse("0.5*z2^2", decl(0, 2)));
  std::mt19937_64 rng(8);
  const ConstraintChainReport rep = run_constraint_algorithm(prob, random_state(rng, 0, 2), 1);
  EXPECT_FALSE(rep.stabilized);
  EXPECT_FALSE(rep.note.empty());
}

TEST(Regularity, RigidBodyIdentity) {
  std::mt19937_64 rng(10);
  const RegularityResult r = regularity_test(rigid_body(), random_state(rng, 0, 3));
  EXPECT_EQ(r.matrix, Eigen::MatrixXd::Identity(3, 3));
  EXPECT_TRUE(r.regular);
}

TEST(Regularity, LinearInAccelerationIsSingular) {
  const SecondOrderProblem prob(tangent_bundle(1), parse("y1*z1 + x1^2", decl(1, 1)));
  std::mt19937_64 rng(11);
  const RegularityResult r = regularity_test(prob, random_state(rng, 1, 1));
  EXPECT_EQ(r.matrix.norm(), 0.0);
  EXPECT_FALSE(r.regular);
  EXPECT_THROW(optimality_field(prob, random_state(rng, 1, 1)), RegularityError);
}

TEST(OptimalityField, RigidBodyComponents) {
  const SecondOrderProblem prob = rigid_body();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    PontryaginState s = random_state(rng, 0, 3);
    s.pbar = s.z;
    const PontryaginState r = optimality_field(prob, s);
    const Eigen::Vector3d p = s.p, W = s.y;
    EXPECT_NEAR(r.p[0], p[1] * W[2] - p[2] * W[1], 1e-14);
    EXPECT_NEAR(r.p[1], p[2] * W[0] - p[0] * W[2], 1e-14);
    EXPECT_NEAR(r.p[2], p[0] * W[1] - p[1] * W[0], 1e-14);
    EXPECT_LT((r.pbar + s.p).norm(), 1e-14);
    EXPECT_LT((r.y - s.z).norm(), 1e-15);
    EXPECT_LT((r.z - r.pbar).norm(), 1e-14);
  }
}

TEST(OptimalityField, AbelianOverPointGivesCubics) {
  const SecondOrderProblem prob(lie_algebra(2, {}, "abelian2"), parse("0.5*(z1^2 + z2^2)", decl(0, 2)));
  std::mt19937_64 rng(13);
  PontryaginState s = random_state(rng, 0, 2);
  s.pbar = s.z;
  const PontryaginState r = optimality_field(prob, s);
  EXPECT_EQ(r.p.norm(), 0.0);
  EXPECT_LT((r.z + s.p).norm(), 1e-15);
}

TEST(OptimalityField, TrajectoriesAnnihilateSecondOrderResidual) {
  const SecondOrderProblem prob(tangent_bundle(2), parse("0.5*(z1^2 + (1 + x1^2)*z2^2) + cos(x2)*y1 - x1*y2^2", decl(2, 2)));
  const ReducedSystem& sys = prob.reduced();
  std::mt19937_64 rng(14);
  const PontryaginState s0 = sys.project_to_primary(random_state(rng, 2, 2));
  const Trajectory tr =
      integrate([&](double, const Eigen::VectorXd& v) { return sys.field(PontryaginState::unflatten(v, 2, 2, 2)).flatten(); }, s0.flatten(),
                1.0, Rk4{1e-3});
  double worst = 0.0;
  for (double t = 0.1; t <= 0.9; t += 0.05) {
    const Eigen::VectorXd v = tr.at(t);
    SecondOrderJet jet{v.segment(0, 2), v.segment(2, 2), v.segment(4, 2), Eigen::VectorXd(2), Eigen::VectorXd(2)};
    for (Eigen::Index c = 0; c < 2; ++c) {
      jet.y2[c] = finite_difference_jet(tr, static_cast<std::size_t>(4 + c), 1, t);
      jet.y3[c] = finite_difference_jet(tr, static_cast<std::size_t>(4 + c), 2, t);
    }
    worst = std::max(worst, second_order_el_residual(prob, jet).lpNorm<Eigen::Infinity>());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Multipliers, BorderedSystemKeepsConstraint) {
  const SecondOrderProblem prob(tangent_bundle(2), parse("0.5*(z1^2 + z2^2)", decl(2, 2)), {parse("z2 - x1*z1 - y1^2", decl(2, 2))},
                                Mode::constrained_multipliers);
  PontryaginState s{Eigen::Vector2d(0.1, 0.0), Eigen::Vector2d(0.2, 0.04), Eigen::Vector2d(0.3, 0.07), Eigen::Vector2d(0.1, -0.2),
                    Eigen::Vector2d::Zero()};
  const Eigen::VectorXd lambda = consistent_multipliers(prob, s);
  s.pbar = Eigen::Vector2d(s.z[0] - lambda[0] * s.x[0], s.z[1] + lambda[0]);
  EXPECT_TRUE(regularity_test(prob, s, lambda).regular);
  const MultiplierRates r = multiplier_field(prob, s, lambda);
  // d/dt Phi = z2dot - x1dot z1 - x1 z1dot - 2 y1 y1dot must vanish.
  const double phidot = r.rates.z[1] - r.rates.x[0] * s.z[0] - s.x[0] * r.rates.z[0] - 2 * s.y[0] * r.rates.y[0];
  EXPECT_NEAR(phidot, 0.0, 1e-14);
}

TEST(Elimination, SolveAffine) {
  const Declarations d = decl(2, 2);
  const Elimination e = solve_affine({parse("2*z2 - x1*z1 - y1^2", d)}, {1}, 2);
  ASSERT_EQ(e.psi.size(), 1u);
  const std::map<std::string, double> at{{"x1", 0.5}, {"y1", 0.3}, {"z1", -2.0}};
  EXPECT_NEAR(evaluate(e.psi[0], at), (0.5 * -2.0 + 0.09) / 2, 1e-15);
  EXPECT_THROW(solve_affine({parse("z2^2 - z1", d)}, {1}, 2), Error);
}

TEST(Vakonomic, NoConstraintsIsFirstOrderDynamics) {
  Declarations d;
  d.block("x", 1).block("y", 4);
  const Expr L = parse("0.5*(y1^2 + 2*y2^2 + y3^2 + y4^2) + x1*y2 - cos(x1)", d);
  const AlgebroidChart chart = elroy_beanie(2.0, 3.0);
  const SecondOrderProblem vak(chart, L, {}, Mode::vakonomic, Elimination{});
  const LagrangianProblem lp(chart, L);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd x = random_vec(rng, 1), y = random_vec(rng, 4);
    VakonomicState s{x, legendre(lp, {x, y}), y};
    EXPECT_LT(vakonomic_constraint(vak, s).norm(), 1e-14);
    const VakonomicState r = vakonomic_field(vak, s);
    const Eigen::VectorXd el = el_vector_field(lp, {x, y});
    EXPECT_LT((r.x - el.head(1)).norm(), 1e-14);
    EXPECT_LT((r.y - el.tail(4)).norm(), 1e-12);
  }
}

TEST(Vakonomic, FixedVelocityComponentMovesInStraightLines) {
  Declarations d;
  d.block("x", 2).block("y", 2);
  const SecondOrderProblem vak(tangent_bundle(2), parse("0.5*(y1^2 + y2^2)", d), {}, Mode::vakonomic, Elimination{{0}, {Expr(0.7)}});
  VakonomicState s{Eigen::Vector2d(0.1, 0.2), Eigen::Vector2d(0.3, 0.5), Eigen::VectorXd::Constant(1, 0.5)};
  const VakonomicState r = vakonomic_field(vak, s);
  EXPECT_NEAR(r.x[0], 0.7, 1e-15);
  EXPECT_NEAR(r.x[1], 0.5, 1e-15);
  EXPECT_NEAR(r.y[0], 0.0, 1e-15);
  EXPECT_NEAR(r.p[0], 0.0, 1e-15);
}

TEST(Vakonomic, RegularityMatrixMatchesFormula) {
  Declarations d;
  d.block("x", 2).block("y", 2);
  const SecondOrderProblem vak(tangent_bundle(2), parse("0.5*(y1^2 + y2^2)", d), {}, Mode::vakonomic,
                               Elimination{{0}, {parse("x2*y2^2", d)}});
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd x = random_vec(rng, 2), p = random_vec(rng, 2), y = random_vec(rng, 1);
    PontryaginState probe;
    probe.x = x;
    probe.y = y;
    probe.p = p;
    const RegularityResult r = regularity_test(vak, probe);
    // L~ = (x2^2 y2^4 + y2^2)/2, so d2L~ = 6 x2^2 y2^2 + 1 and p1 d2Psi = 2 p1 x2.
    EXPECT_NEAR(r.matrix(0, 0), 6 * x[1] * x[1] * y[0] * y[0] + 1 - 2 * p[0] * x[1], 1e-13);
  }
}
