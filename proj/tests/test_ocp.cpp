#include "algmech/error.hpp"
#include "algmech/ocp.hpp"
#include "algmech/parser.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace algmech;

namespace {

Declarations xyu(std::size_t m, std::size_t n, std::size_t k) {
  Declarations d;
  d.block("x", m).block("y", n).block("u", k);
  return d;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

std::map<std::string, double> point(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& z) {
  std::map<std::string, double> at;
  for (Eigen::Index i = 0; i < x.size(); ++i) at[coordinate_name("x", static_cast<std::size_t>(i))] = x[i];
  for (Eigen::Index i = 0; i < y.size(); ++i) at[coordinate_name("y", static_cast<std::size_t>(i))] = y[i];
  for (Eigen::Index i = 0; i < z.size(); ++i) at[coordinate_name("z", static_cast<std::size_t>(i))] = z[i];
  return at;
}

ControlProblem rigid_body(double I1, double I2, double I3, const char* cost = "0.5*(u1^2 + u2^2 + u3^2)") {
  Declarations d = xyu(0, 3, 3);
  d.parameter("I1", I1).parameter("I2", I2).parameter("I3", I3);
  return ControlProblem{so3(), parse("0.5*(I1*y1^2 + I2*y2^2 + I3*y3^2)", d), parse(cost, d), {0, 1, 2}};
}

ControlProblem elroy(double I1, double I2, const char* potential) {
  Declarations d = xyu(1, 4, 1);
  const std::string L = std::string("0.5*(y1^2 + y2^2 + y3^2 + y4^2) - (") + potential + ")";
  return ControlProblem{elroy_beanie(I1, I2), parse(L, d), parse("0.5*u1^2", d), {0}};
}

}  // namespace

TEST(FullyActuated, EqualInertiasGiveSquaredAcceleration) {
  const SecondOrderProblem prob = build_fully_actuated(rigid_body(1, 1, 1));
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d y = random_vec(rng, 3), z = random_vec(rng, 3);
    EXPECT_NEAR(evaluate(prob.lagrangian(), point(Eigen::VectorXd(0), y, z)), 0.5 * z.squaredNorm(), 1e-14);
  }
}

TEST(FullyActuated, GeneralInertias) {
  const double I1 = 1.0, I2 = 2.0, I3 = 3.5;
  const SecondOrderProblem prob = build_fully_actuated(rigid_body(I1, I2, I3));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d y = random_vec(rng, 3), z = random_vec(rng, 3);
    const double a = I1 * z[0] - (I2 - I3) * y[1] * y[2];
    const double b = I2 * z[1] - (I3 - I1) * y[2] * y[0];
    const double c = I3 * z[2] - (I1 - I2) * y[0] * y[1];
    EXPECT_NEAR(evaluate(prob.lagrangian(), point(Eigen::VectorXd(0), y, z)), 0.5 * (a * a + b * b + c * c), 1e-13);
  }
}

TEST(FullyActuated, ZeroCostIsDegenerate) {
  const SecondOrderProblem prob = build_fully_actuated(rigid_body(1, 1, 1, "0"));
  EXPECT_TRUE(prob.lagrangian().is_constant(0.0));
  PontryaginState s{Eigen::VectorXd(0), Eigen::Vector3d(1, 2, 3), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
  EXPECT_FALSE(regularity_test(prob, s).regular);
}

TEST(ControlProblemChecks, CostMayNotReadUnactuatedForces) {
  Declarations d = xyu(1, 4, 2);
  ControlProblem cp{elroy_beanie(1, 1), parse("0.5*(y1^2 + y2^2 + y3^2 + y4^2)", d), parse("u1^2 + u2^2", d), {0}};
  EXPECT_THROW(check_control_problem(cp), Error);
  cp.actuation = {0, 0};
  EXPECT_THROW(check_control_problem(cp), Error);
}

TEST(Underactuated, FullyActuatedInputRejected) { EXPECT_THROW(build_underactuated(rigid_body(1, 1, 1)), Error); }

TEST(Underactuated, ElroyReducedLagrangian) {
  const double I1 = 2.0, I2 = 3.0;
  const ReducedUnderactuatedProblem red = build_underactuated(elroy(I1, I2, "cos(x1)"));
  const double r = std::sqrt((I1 + I2) / (I1 * I2));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd x = random_vec(rng, 1), y = random_vec(rng, 4), z = random_vec(rng, 1);
    // dV/dpsi = -sin(psi).
    const double expected = 0.5 * std::pow(z[0] + r * -std::sin(x[0]), 2);
    Eigen::VectorXd zfull = Eigen::VectorXd::Zero(4);
    zfull[0] = z[0];
    EXPECT_NEAR(evaluate(red.reduced_lagrangian, point(x, y, zfull)), expected, 1e-13);
  }
  ASSERT_EQ(red.G.size(), 3u);
  ASSERT_EQ(red.problem.constraints().size(), 3u);
}

TEST(Underactuated, RegularityIsOneByOneIdentity) {
  const ReducedUnderactuatedProblem red = build_underactuated(elroy(1.0, 1.0, "0.3*x1^2"));
  std::mt19937_64 rng(4);
  PontryaginState s{random_vec(rng, 1), random_vec(rng, 4), random_vec(rng, 1), random_vec(rng, 4), random_vec(rng, 4)};
  const RegularityResult r = regularity_test(red.problem, s);
  ASSERT_EQ(r.matrix.rows(), 1);
  EXPECT_NEAR(r.matrix(0, 0), 1.0, 1e-14);
  EXPECT_TRUE(r.regular);
}

TEST(Underactuated, QuadraticAbelianElimination) {
  Declarations d = xyu(2, 2, 1);
  const ControlProblem cp{tangent_bundle(2), parse("0.5*(y1^2 + y2^2)", d), parse("0.5*u1^2", d), {0}};
  const ReducedUnderactuatedProblem red = build_underactuated(cp);
  ASSERT_EQ(red.G.size(), 1u);
  EXPECT_TRUE(red.G[0].is_constant(0.0)) << to_string(red.G[0]);
  const std::map<std::string, double> at{{"x1", 0.1}, {"x2", 0.2}, {"y1", 0.3}, {"y2", 0.4}, {"z1", 0.5}, {"z2", 0.6}};
  EXPECT_NEAR(evaluate(red.problem.constraints()[0], at), 0.6, 1e-15);
}

TEST(Underactuated, DecoupledAbelianFlow) {
  Declarations d = xyu(2, 2, 1);
  const ControlProblem cp{tangent_bundle(2), parse("0.5*(y1^2 + y2^2)", d), parse("0.5*u1^2", d), {0}};
  const ReducedUnderactuatedProblem red = build_underactuated(cp);
  std::mt19937_64 rng(5);
  PontryaginState s{random_vec(rng, 2), random_vec(rng, 2), random_vec(rng, 1), random_vec(rng, 2), random_vec(rng, 2)};
  s = red.system().project_to_primary(s);
  const PontryaginState r = underactuated_optimality_field(red, s);
  // Actuated direction: cubic spline (pbar1 = z1, pbar1' = -p1); unactuated: y2 constant, x2 linear.
  EXPECT_NEAR(r.z[0], -s.p[0], 1e-14);
  EXPECT_NEAR(r.y[1], 0.0, 1e-15);
  EXPECT_NEAR(r.x[1], s.y[1], 1e-15);
  EXPECT_LT(r.p.norm(), 1e-15);
}

TEST(Underactuated, ControlReconstruction) {
  const ControlProblem cp = rigid_body(1, 2, 3);
  const ControlReconstruction u(cp);
  const Eigen::Vector3d y(0.1, 0.2, 0.3), z(1, 2, 3);
  const Eigen::VectorXd v = u(Eigen::VectorXd(0), y, z);
  EXPECT_NEAR(v[0], 1 * z[0] - (2 - 3) * y[1] * y[2], 1e-15);
  EXPECT_THROW(u(Eigen::VectorXd(0), y, Eigen::VectorXd::Zero(2)), DimensionError);
}

TEST(Shooting, NonSquareBoundaryIsRejected) {
  const SecondOrderProblem prob = build_fully_actuated(rigid_body(1, 1, 1));
  Boundary b;
  b.x0 = b.xT = Eigen::VectorXd(0);
  b.y0 = b.yT = Eigen::Vector3d::Zero();
  EXPECT_THROW(optimality_shooting(prob.reduced(), b), DimensionError);
  b.z0 = Eigen::Vector3d::Zero();
  EXPECT_NO_THROW(optimality_shooting(prob.reduced(), b));
}

TEST(Shooting, UnknownsRoundTrip) {
  const SecondOrderProblem prob = build_fully_actuated(rigid_body(1, 1, 1));
  Boundary b;
  b.x0 = b.xT = Eigen::VectorXd(0);
  b.y0 = Eigen::Vector3d(0.1, 0.2, 0.3);
  b.yT = Eigen::Vector3d::Zero();
  b.z0 = Eigen::Vector3d(0.5, 0.0, -0.5);
  const ShootingProblem sp = optimality_shooting(prob.reduced(), b);
  const Eigen::Vector3d u(0.3, -0.2, 0.1);
  const PontryaginState s = PontryaginState::unflatten(sp.initial_state(u), 0, 3, 3);
  EXPECT_EQ(shooting_unknowns(prob.reduced(), b, s), Eigen::VectorXd(u));
  EXPECT_LT(prob.reduced().primary_constraint(s).norm(), 1e-15);
}
