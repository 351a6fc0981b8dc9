#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spde/solver.hpp"

namespace spde {
namespace {

Mesh square(int n) { return build_structured_mesh(2.0, n, {-1.0, -1.0}); }

SchemeConfig config(double tau, double T, Scheme s = Scheme::kMilstein) {
  SchemeConfig c;
  c.tau = tau;
  c.T = T;
  c.scheme = s;
  return c;
}

Field random_field(const Mesh& m, std::uint32_t seed, double amp = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  Field f(m);
  for (int v : m.free_dofs()) f.coeffs[v] = d(rng);
  return f;
}

TEST(SchemeConfig, StepCount) {
  EXPECT_EQ(config(1.0 / 40, 0.25).steps(), 10u);
  EXPECT_EQ(config(0.003125, 0.25).steps(), 80u);
  EXPECT_THROW(config(0.03, 0.25).steps(), InvalidParameter);
  EXPECT_THROW(config(0.0, 0.25).steps(), InvalidParameter);
  SchemeConfig c = config(0.01, 0.1);
  c.newton_max_iter = 0;
  EXPECT_THROW(c.validate(), InvalidParameter);
}

TEST(Step, HatMatrixOracle) {
  const Mesh m = square(2);
  const P1Space space(m);
  EXPECT_DOUBLE_EQ(space.mass().entry(0, 0), oracle::kHatMass);
  EXPECT_DOUBLE_EQ(space.stiffness().entry(0, 0), oracle::kHatStiffness);
}

TEST(Step, ScalarBisectionOracle) {
  const Mesh m = square(2);
  const P1Space space(m);
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> ud(-1.5, 1.5), dd(0.0, 1.0), td(0.001, 0.1);
  for (int trial = 0; trial < 100; ++trial) {
    Model model;
    model.drift = DriftSpec::canonical(trial % 2 == 0 ? 3 : 5);
    model.diffusion = trial % 3 == 0 ? DiffusionSpec::smoothed_sqrt(dd(rng)) : DiffusionSpec::linear(dd(rng));
    const double tau = td(rng);
    StepWorkspace ws(space, model, config(tau, tau));
    SchemeConfig tight = config(tau, tau);
    tight.newton_tol = 1e-15;
    StepWorkspace ws_tight(space, model, tight);
    Field U(m);
    U.coeffs[4] = ud(rng);
    const double dW = std::sqrt(tau) * std::normal_distribution<double>()(rng);
    for (bool mil : {true, false}) {
      const DiffusionValues g = model.diffusion.eval(U.coeffs[4]);
      oracle::ScalarStep s;
      s.tau = tau;
      s.F = [&](double x) { return model.drift.value(x); };
      s.u = U.coeffs[4];
      s.g = g.g;
      s.dgg = g.dg_g;
      s.dW = dW;
      s.milstein = mil;
      const double expected = oracle::scalar_step(s);
      const Field next = mil ? milstein_step(U, dW, ws) : euler_maruyama_step(U, dW, ws);
      EXPECT_NEAR(next.coeffs[4], expected, 1e-9) << "trial " << trial;
      const Field exact = mil ? milstein_step(U, dW, ws_tight) : euler_maruyama_step(U, dW, ws_tight);
      EXPECT_NEAR(exact.coeffs[4], expected, 1e-12) << "trial " << trial;
      EXPECT_TRUE(next.boundary_is_zero());
    }
  }
}

TEST(Step, SchemesCoincideWithoutNoise) {
  const Mesh m = square(8);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::linear(0.0);
  StepWorkspace ws(space, model, config(1.0 / 64, 0.25));
  const auto path = generate_path(1, 0, 16, 1.0 / 64);
  Vector a = random_field(m, 3).free_values(), b = a;
  for (double dW : path.increments) {
    a = ws.advance(a, dW, Scheme::kMilstein);
    b = ws.advance(b, dW, Scheme::kEulerMaruyama);
    ASSERT_EQ(a, b);
  }
}

TEST(Step, SchemesCoincideWhenBracketVanishes) {
  const Mesh m = square(8);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::smoothed_sqrt(0.5);
  const double tau = 1.0 / 64;  // sqrt is exact, so (dW^2 - tau) / 2 == 0
  StepWorkspace ws(space, model, config(tau, tau));
  const Vector u = random_field(m, 4).free_values();
  for (double dW : {std::sqrt(tau), -std::sqrt(tau)}) {
    EXPECT_EQ(ws.step_rhs(u, dW, Scheme::kMilstein), ws.step_rhs(u, dW, Scheme::kEulerMaruyama));
    EXPECT_EQ(ws.advance(u, dW, Scheme::kMilstein), ws.advance(u, dW, Scheme::kEulerMaruyama));
  }
}

TEST(Step, RhsDifferenceIsCorrectionTerm) {
  const Mesh m = square(6);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::linear(0.7);
  const double tau = 0.01, dW = 0.23;
  StepWorkspace ws(space, model, config(tau, tau));
  const Vector u = random_field(m, 5).free_values();
  const Vector diff = ws.step_rhs(u, dW, Scheme::kMilstein) - ws.step_rhs(u, dW, Scheme::kEulerMaruyama);
  const Vector expected = 0.5 * (dW * dW - tau) * (space.mass().matrix() * (0.49 * u));
  EXPECT_LT((diff - expected).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(Step, ZeroIsFixedPoint) {
  const Mesh m = square(10);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::linear(1.0);
  StepWorkspace ws(space, model, config(0.01, 0.01));
  const Field z(m);
  for (double dW : {-0.3, 0.0, 0.5}) {
    EXPECT_EQ(milstein_step(z, dW, ws).coeffs.norm(), 0.0);
    EXPECT_EQ(ws.last_iterations(), 0);
  }
}

TEST(Step, HeatEquationDecaysAlongEigenvector) {
  const Mesh m = square(16);
  const P1Space space(m);
  const EigenEstimate eig = smallest_laplacian_eigenvalue(space, 0.0, 200);
  Model model;
  model.drift = DriftSpec::zero();
  model.diffusion = DiffusionSpec::linear(0.0);
  const double tau = 0.01;
  StepWorkspace ws(space, model, config(tau, 0.1));
  Vector u = eig.vector;
  const Vector u0 = u;
  for (int n = 1; n <= 10; ++n) {
    u = ws.advance(u, 0.37, Scheme::kMilstein);
    const Vector expected = u0 / std::pow(1.0 + tau * eig.value, n);
    EXPECT_LT((u - expected).norm(), 1e-9 * u0.norm()) << "step " << n;
  }
}

TEST(Step, DenseImplicitEulerOracle) {
  const Mesh m = square(4);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::linear(0.0);
  const double tau = 0.05;
  const int steps = 10;
  StepWorkspace ws(space, model, config(tau, tau * steps));
  const Vector u0 = random_field(m, 8, 1.2).free_values();
  Vector u = u0;
  for (int n = 0; n < steps; ++n) u = ws.advance(u, 0.0, Scheme::kEulerMaruyama);
  const Eigen::MatrixXd M = Eigen::MatrixXd(space.mass().matrix());
  const Eigen::MatrixXd K = Eigen::MatrixXd(space.stiffness().matrix());
  const Vector ref = oracle::dense_implicit_euler(
      M, K, u0, tau, steps, [](double x) { return x - x * x * x; }, [](double x) { return 1.0 - 3.0 * x * x; });
  EXPECT_LT((u - ref).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(Step, JacobianMatchesFiniteDifferences) {
  const Mesh m = square(5);
  const P1Space space(m);
  for (const auto& drift : {DriftSpec::canonical(3), DriftSpec::canonical(11), DriftSpec::polynomial({2.0, 0.5, 0.25})}) {
    Model model;
    model.drift = drift;
    StepWorkspace ws(space, model, config(0.01, 0.01));
    const Vector U = random_field(m, 6, 1.1).free_values();
    const Vector rhs = Vector::Zero(U.size());
    const Eigen::MatrixXd J = Eigen::MatrixXd(ws.jacobian(U));
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < U.size(); ++j) {
      Vector up = U, dn = U;
      up[j] += h;
      dn[j] -= h;
      const Vector fd = (ws.residual(up, rhs) - ws.residual(dn, rhs)) / (2 * h);
      EXPECT_LT((fd - J.col(j)).norm(), 1e-5 * std::max(1.0, J.col(j).norm())) << "column " << j;
    }
  }
}

TEST(Step, NewtonConvergesQuickly) {
  const Mesh m = square(20);
  const P1Space space(m);
  Model model;
  model.drift = DriftSpec::canonical(11);
  model.diffusion = DiffusionSpec::smoothed_sqrt(0.1);
  StepWorkspace ws(space, model, config(2e-3, 0.1));
  const Field u0 = interpolate_nodal(TanhCircle{0.6, 0.5}, m);
  const auto rec = run_trajectory(u0, generate_path(4, 0, 50, 2e-3).increments, ws);
  for (std::size_t n = 1; n < rec.newton_iterations.size(); ++n) {
    EXPECT_GE(rec.newton_iterations[n], 1);
    EXPECT_LE(rec.newton_iterations[n], 6);
  }
  EXPECT_LE(ws.last_residual(), 1e-10);
}

TEST(Step, IterativeMatchesDirect) {
  const Mesh m = square(16);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::linear(0.5);
  SchemeConfig direct = config(0.01, 0.1), iterative = direct;
  iterative.linear_solver = LinearSolverKind::kIterative;
  StepWorkspace a(space, model, direct), b(space, model, iterative);
  const auto path = generate_path(2, 0, 10, 0.01);
  const Vector u0 = interpolate_nodal(TanhCircle{0.6, 0.1}, m).free_values();
  const Vector ua = integrate(u0, path.increments, Scheme::kMilstein, a, nullptr);
  const Vector ub = integrate(u0, path.increments, Scheme::kMilstein, b, nullptr);
  EXPECT_LT((ua - ub).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Step, FirstOrderInTimeDeterministic) {
  const Mesh m = square(8);
  const P1Space space(m);
  Model model;
  const Vector u0 = interpolate_nodal(TanhCircle{0.6, 0.3}, m).free_values();
  std::vector<Vector> sol;
  for (int n : {40, 80, 160, 320}) {
    StepWorkspace ws(space, model, config(0.2 / n, 0.2));
    sol.push_back(integrate(u0, std::vector<double>(static_cast<std::size_t>(n), 0.0), Scheme::kMilstein, ws, nullptr));
  }
  for (std::size_t k = 0; k + 2 < sol.size(); ++k) {
    const double ratio = (sol[k] - sol[k + 1]).norm() / (sol[k + 1] - sol[k + 2]).norm();
    EXPECT_NEAR(ratio, 2.0, 0.25);
  }
}

TEST(Trajectory, RecordShape) {
  const Mesh m = square(8);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::linear(0.1);
  StepWorkspace ws(space, model, config(0.01, 0.05));
  TrajectoryMonitors mon;
  mon.snapshot_steps = {0, 5};
  const Field u0 = interpolate_nodal(TanhCircle{0.6, 0.3}, m);
  const auto rec = run_trajectory(u0, generate_path(1, 0, 5, 0.01).increments, ws, mon);
  EXPECT_EQ(rec.times.size(), 6u);
  EXPECT_EQ(rec.l2.size(), 6u);
  EXPECT_EQ(rec.lp.size(), 6u);
  EXPECT_EQ(rec.newton_iterations.size(), 6u);
  EXPECT_EQ(rec.lp_exponent, 4.0);
  ASSERT_EQ(rec.snapshots.size(), 2u);
  EXPECT_EQ(rec.snapshots[0].second.coeffs, u0.coeffs);
  EXPECT_DOUBLE_EQ(rec.times.back(), 0.05);
  EXPECT_NEAR(rec.l2[0], norm(u0, space, NormKind::kL2), 1e-12);
  EXPECT_THROW(run_trajectory(u0, generate_path(1, 0, 4, 0.01).increments, ws, mon), InvalidParameter);
}

TEST(Failures, NewtonBudgetExhausted) {
  const Mesh m = square(6);
  const P1Space space(m);
  Model model;
  SchemeConfig c = config(0.01, 0.02);
  c.newton_tol = 1e-300;
  c.newton_max_iter = 2;
  StepWorkspace ws(space, model, c);
  const Vector u0 = random_field(m, 1).free_values();
  try {
    integrate(u0, {0.0, 0.0}, Scheme::kMilstein, ws, nullptr);
    FAIL();
  } catch (const StepFailure& e) {
    EXPECT_EQ(e.iterations(), 2);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Failures, DivergenceGuard) {
  const Mesh m = square(6);
  const P1Space space(m);
  Model model;
  model.drift = DriftSpec::polynomial({50.0});
  StepWorkspace ws(space, model, config(0.019, 0.019 * 20));
  const Vector u0 = random_field(m, 2).free_values();
  EXPECT_THROW(integrate(u0, std::vector<double>(20, 0.0), Scheme::kMilstein, ws, nullptr), DivergenceError);
}

TEST(Failures, UserDiffusionEvaluationError) {
  const Mesh m = square(4);
  const P1Space space(m);
  Model model;
  model.diffusion = DiffusionSpec::user([](double u) { return std::sqrt(u); }, [](double u) { return 0.5 / std::sqrt(u); });
  StepWorkspace ws(space, model, config(0.01, 0.01));
  Field u(m);
  u.coeffs.setConstant(-0.5);
  u.coeffs[m.vertex_of_free(0)] = -0.5;
  EXPECT_THROW(milstein_step(Field::from_free(m, u.free_values()), 0.1, ws), EvaluationError);
}

}  // namespace
}  // namespace spde
