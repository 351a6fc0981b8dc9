// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Pass criterion names (AC1 ... AC7) as
// arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spde/spde.hpp"

using namespace spde;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string preset(const std::string& name) { return std::string(SPDE_SOURCE_DIR) + "/presets/" + name; }

ExperimentConfig load_preset(const std::string& name) {
  return ExperimentConfig::from_config(Config::load(preset(name)));
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

bool in_band(const std::optional<double>& v, double lo, double hi) { return v && *v >= lo && *v <= hi; }

// Temporal strong order on the desk configuration.
Outcome ac1() {
  const RateTable t = strong_error_study(load_preset("test3_desk"));
  const RateRow& last = t.rows.back();
  Outcome o;
  o.pass = in_band(last.order_linf_el2, 0.75, 1.25) && in_band(last.order_el2h1, 0.75, 1.25);
  std::ostringstream d;
  d << "orders LinfEL2";
  for (const auto& r : t.rows) d << ' ' << (r.order_linf_el2 ? fmt(*r.order_linf_el2) : "-");
  d << ", EL2H1";
  for (const auto& r : t.rows) d << ' ' << (r.order_el2h1 ? fmt(*r.order_el2h1) : "-");
  d << "; band [0.75, 1.25] on the last pair";
  o.detail = d.str();
  return o;
}

// Milstein versus Euler-Maruyama on identical coupled paths, noise-dominated.
Outcome ac2() {
  const ExperimentConfig cfg = load_preset("test3_desk_noisy");
  const auto tables = strong_error_study(cfg, {Scheme::kMilstein, Scheme::kEulerMaruyama});
  const RateTable& mil = tables[0];
  const RateTable& em = tables[1];
  bool em_worse_everywhere = true;
  for (std::size_t k = 0; k < mil.rows.size(); ++k) {
    em_worse_everywhere = em_worse_everywhere && em.rows[k].err_linf_el2 > mil.rows[k].err_linf_el2 &&
                          em.rows[k].err_el2h1 > mil.rows[k].err_el2h1;
  }
  const auto& ml = mil.rows.back();
  const auto& el = em.rows.back();
  const bool gap = ml.order_linf_el2 && el.order_linf_el2 && ml.order_el2h1 && el.order_el2h1 &&
                   *el.order_linf_el2 <= *ml.order_linf_el2 - 0.2 && *el.order_el2h1 <= *ml.order_el2h1 - 0.2;
  Outcome o;
  o.pass = gap || em_worse_everywhere;
  std::ostringstream d;
  d << "LinfEL2 errors (milstein/em):";
  for (std::size_t k = 0; k < mil.rows.size(); ++k) {
    d << ' ' << fmt(mil.rows[k].err_linf_el2, "%.3e") << '/' << fmt(em.rows[k].err_linf_el2, "%.3e");
  }
  d << "; last orders milstein " << (ml.order_linf_el2 ? fmt(*ml.order_linf_el2) : "-") << " em "
    << (el.order_linf_el2 ? fmt(*el.order_linf_el2) : "-") << "; order gap >= 0.2: " << (gap ? "yes" : "no")
    << ", em worse at every level: " << (em_worse_everywhere ? "yes" : "no");
  o.detail = d.str();
  return o;
}

// Moment boundedness for the Test-1 and Test-2 presets.
Outcome ac3() {
  Outcome o;
  o.pass = true;
  std::ostringstream d;
  for (const char* name : {"test1_delta0.1", "test1_delta1", "test2", "test2_delta1"}) {
    ExperimentConfig cfg = load_preset(name);
    cfg.samples = 50;
    cfg.T = 0.1;
    bool ok = true;
    double worst = 0.0;
    try {
      const StabilitySeries s = stability_study(cfg);
      const StabilityRow& r0 = s.rows.front();
      const double init[5] = {r0.mean_l2sq, r0.mean_l2_p4, r0.mean_l2_p8, r0.mean_h1sq, r0.mean_h1_p4};
      for (const auto& r : s.rows) {
        const double v[5] = {r.mean_l2sq, r.mean_l2_p4, r.mean_l2_p8, r.mean_h1sq, r.mean_h1_p4};
        for (int k = 0; k < 5; ++k) {
          if (!std::isfinite(v[k])) ok = false;
          if (init[k] > 0.0) worst = std::max(worst, v[k] / init[k]);
        }
      }
      ok = ok && s.divergences == 0 && worst <= 50.0;
      d << name << ": divergences " << s.divergences << ", max moment ratio " << fmt(worst, "%.3f") << "; ";
    } catch (const NumericalError& e) {
      ok = false;
      d << name << ": " << e.what() << "; ";
    }
    o.pass = o.pass && ok;
  }
  d << "limit 50";
  o.detail = d.str();
  return o;
}

// Projection order and first eigenvalue. The data is the first Dirichlet
// eigenfunction of the square, sin(pi x')sin(pi y') in unit coordinates.
// The literal sin(pi x)sin(pi y) on (-1,1)^2 has twice the wavenumber and is
// reported alongside for information.
std::pair<double, double> projection_orders(const ScalarField2D& f) {
  std::vector<double> errs;
  for (int n : {10, 20, 40}) {
    const Mesh m = build_structured_mesh(2.0, n, {-1.0, -1.0});
    const P1Space space(m);
    errs.push_back(l2_error(l2_project(f, space), f, 2));
  }
  return {std::log2(errs[0] / errs[1]), std::log2(errs[1] / errs[2])};
}

Outcome ac4() {
  const auto [o1, o2] = projection_orders(
      [](double x, double y) { return std::sin(kPi * (x + 1.0) / 2.0) * std::sin(kPi * (y + 1.0) / 2.0); });
  const auto [l1, l2] = projection_orders([](double x, double y) { return std::sin(kPi * x) * std::sin(kPi * y); });
  const Mesh m = build_structured_mesh(2.0, 40, {-1.0, -1.0});
  const P1Space space(m);
  const double lambda = smallest_laplacian_eigenvalue(space).value;
  const double exact = kPi * kPi / 2.0;
  const double rel = std::abs(lambda - exact) / exact;
  Outcome o;
  o.pass = std::abs(o1 - 2.0) <= 0.15 && std::abs(o2 - 2.0) <= 0.15 && rel <= 0.02;
  o.detail = "projection orders " + fmt(o1) + ", " + fmt(o2) + " (2 +- 0.15; sin(pi x)sin(pi y) on (-1,1)^2: " +
             fmt(l1) + ", " + fmt(l2) + "); lambda_h " + fmt(lambda, "%.6f") + " vs " + fmt(exact, "%.6f") +
             ", rel " + fmt(rel, "%.2e") + " (<= 2%)";
  return o;
}

// Deterministic reduction.
Outcome ac5() {
  Outcome o;
  std::ostringstream d;
  // Bit-identical schemes without noise, on a Test-3 style run.
  bool identical = true;
  {
    const Mesh m = build_structured_mesh(2.0, 20, {-1.0, -1.0});
    const P1Space space(m);
    Model model;
    model.diffusion = DiffusionSpec::linear(0.0);
    SchemeConfig sc;
    sc.tau = 1.0 / 80;
    sc.T = 0.25;
    StepWorkspace ws(space, model, sc);
    const auto path = generate_path(42, 0, sc.steps(), sc.tau);
    const Vector u0 = l2_project(TanhCircle{0.8, 0.3}, space).free_values();
    std::vector<Vector> a, b;
    integrate(u0, path.increments, Scheme::kMilstein, ws, [&](std::size_t, const Vector& u) { a.push_back(u); });
    integrate(u0, path.increments, Scheme::kEulerMaruyama, ws, [&](std::size_t, const Vector& u) { b.push_back(u); });
    identical = a == b;
  }
  // F = 0: linear implicit Euler against dense algebra, compared every step.
  double worst = 0.0;
  {
    const Mesh m = build_structured_mesh(2.0, 4, {-1.0, -1.0});
    const P1Space space(m);
    Model model;
    model.drift = DriftSpec::zero();
    model.diffusion = DiffusionSpec::linear(0.0);
    SchemeConfig sc;
    sc.tau = 0.01;
    sc.T = 0.2;
    StepWorkspace ws(space, model, sc);
    const Eigen::MatrixXd M = Eigen::MatrixXd(space.mass().matrix());
    const Eigen::MatrixXd K = Eigen::MatrixXd(space.stiffness().matrix());
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Vector u(static_cast<Eigen::Index>(m.num_free()));
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = dist(rng);
    Vector ref = u;
    const auto zero = [](double) { return 0.0; };
    for (std::size_t n = 0; n < sc.steps(); ++n) {
      u = ws.advance(u, 0.3, Scheme::kMilstein);
      ref = oracle::dense_implicit_euler(M, K, ref, sc.tau, 1, zero, zero);
      worst = std::max(worst, (u - ref).lpNorm<Eigen::Infinity>());
    }
  }
  o.pass = identical && worst <= 1e-10;
  d << "schemes bit-identical at delta=0: " << (identical ? "yes" : "no") << "; max per-step deviation from dense oracle "
    << fmt(worst, "%.2e") << " (<= 1e-10)";
  o.detail = d.str();
  return o;
}

// One step on the single-dof mesh against a bisection oracle.
Outcome ac6() {
  const Mesh m = build_structured_mesh(2.0, 2, {-1.0, -1.0});
  const P1Space space(m);
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> ud(-1.5, 1.5);
  std::normal_distribution<double> nd;
  Model model;
  model.drift = DriftSpec::canonical(3);
  model.diffusion = DiffusionSpec::linear(0.5);
  SchemeConfig sc;
  sc.tau = 0.01;
  sc.T = 0.01;
  StepWorkspace ws(space, model, sc);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double u = ud(rng), dW = std::sqrt(sc.tau) * nd(rng);
    Field U(m);
    U.coeffs[m.vertex_of_free(0)] = u;
    const double got = milstein_step(U, dW, ws).coeffs[m.vertex_of_free(0)];
    oracle::ScalarStep s;
    s.m = space.mass().entry(0, 0);
    s.k = space.stiffness().entry(0, 0);
    s.tau = sc.tau;
    s.F = [](double x) { return x - x * x * x; };
    s.u = u;
    s.g = 0.5 * u;
    s.dgg = 0.25 * u;
    s.dW = dW;
    worst = std::max(worst, std::abs(got - oracle::scalar_step(s)));
  }
  return {worst <= 1e-9, "max |newton - bisection| over 100 steps " + fmt(worst, "%.2e") + " (<= 1e-9)"};
}

// Property suites: the unit test executables.
Outcome ac7() {
  std::vector<std::string> failed;
  const char* suites[] = {"test_mesh", "test_fem", "test_level_set", "test_random",
                          "test_model", "test_solver", "test_harness", "test_cli"};
  for (const char* s : suites) {
    const std::string cmd = std::string(SPDE_TEST_BIN_DIR) + "/" + s + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) failed.push_back(s);
  }
  std::string detail = std::to_string(std::size(suites) - failed.size()) + "/" + std::to_string(std::size(suites)) +
                       " suites pass";
  for (const auto& f : failed) detail += ", failed: " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* id;
    const char* title;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"AC1", "temporal strong order", ac1},
      {"AC2", "milstein vs euler-maruyama gap", ac2},
      {"AC3", "moment boundedness", ac3},
      {"AC4", "spatial discretization", ac4},
      {"AC5", "deterministic reduction", ac5},
      {"AC6", "scalar step oracle", ac6},
      {"AC7", "property suites", ac7},
  };
  std::set<std::string> selected(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
