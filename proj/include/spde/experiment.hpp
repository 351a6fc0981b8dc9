#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "spde/config.hpp"
#include "spde/csv.hpp"
#include "spde/fem.hpp"
#include "spde/level_set.hpp"
#include "spde/model.hpp"
#include "spde/random.hpp"
#include "spde/solver.hpp"

namespace spde {

// ---------------------------------------------------------------------------
// Experiment configuration

struct MeshSettings {
  double side = 2.0;
  Point origin{-1.0, -1.0};
  int n_div = 40;

  double h() const { return side / n_div; }
};

struct InitialConditionSettings {
  std::string preset = "tanh_circle";  // tanh_circle | zero | constant | sine
  double r0 = 0.6;
  double eps = 0.04;
  double value = 1.0;   // constant preset
  bool nodal = false;   // I_h u0 instead of P_h u0
};

struct ExperimentConfig {
  MeshSettings mesh;
  Model model;
  InitialConditionSettings ic;

  double T = 0.25;
  double tau = 1.0 / 160.0;                 // stability / evolve
  std::vector<double> tau_levels{1.0 / 40, 1.0 / 80, 1.0 / 160, 1.0 / 320};
  double tau_fine = 1.0 / 1280.0;

  std::size_t samples = 100;
  std::uint64_t seed = 42;
  std::size_t failure_budget = 0;
  unsigned threads = 1;

  Scheme scheme = Scheme::kMilstein;
  Scheme reference_scheme = Scheme::kMilstein;
  std::vector<Scheme> compare_schemes;  // extra schemes run on the same paths

  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  LinearSolverKind linear_solver = LinearSolverKind::kDirect;

  std::string out_dir = "results";
  std::vector<double> snapshot_times{0.0};
  bool average_field = false;

  std::string convergence_mode = "time";  // time | space
  std::vector<double> space_levels{10, 20, 40};
  int space_reference = 160;

  Config source;

  SchemeConfig scheme_config(double step, Scheme s) const {
    SchemeConfig c;
    c.tau = step;
    c.T = T;
    c.scheme = s;
    c.newton_tol = newton_tol;
    c.newton_max_iter = newton_max_iter;
    c.linear_solver = linear_solver;
    return c;
  }

  /// Fingerprint of everything that affects numerical output.
  std::uint64_t hash() const { return fnv1a64(source.canonical({"output.dir", "mc.threads"})); }

  static ExperimentConfig from_config(const Config& c);
};

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{
      "mesh.L",          "mesh.origin_x",     "mesh.origin_y",      "mesh.n_div",     "drift.q",
      "drift.coeffs",    "diffusion.kind",    "diffusion.delta",    "ic.preset",      "ic.r0",
      "ic.eps",          "ic.value",          "ic.projection",      "time.T",         "time.tau",
      "time.tau_levels", "time.tau_fine",     "mc.samples",         "mc.seed",        "mc.failure_budget",
      "mc.threads",      "scheme.kind",       "scheme.reference",   "scheme.compare", "solver.newton_tol",
      "solver.newton_max_iter", "solver.linear", "output.dir",      "output.snapshot_times",
      "output.average_field", "convergence.mode", "space.n_div_levels", "space.n_div_reference"};
  return keys;
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "milstein") return Scheme::kMilstein;
  if (s == "euler_maruyama" || s == "euler") return Scheme::kEulerMaruyama;
  throw ConfigError("unknown scheme '" + s + "' (expected milstein | euler_maruyama)");
}

inline ExperimentConfig ExperimentConfig::from_config(const Config& c) {
  for (const auto& [k, v] : c.values()) {
    const auto& known = known_config_keys();
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  ExperimentConfig e;
  e.source = c;
  e.mesh.side = c.get_double("mesh.L", e.mesh.side);
  e.mesh.origin.x = c.get_double("mesh.origin_x", e.mesh.origin.x);
  e.mesh.origin.y = c.get_double("mesh.origin_y", e.mesh.origin.y);
  e.mesh.n_div = static_cast<int>(c.get_int("mesh.n_div", e.mesh.n_div));
  if (e.mesh.n_div < 1) throw InvalidParameter("mesh.n_div must be >= 1");
  if (!(e.mesh.side > 0.0)) throw InvalidParameter("mesh.L must be > 0");

  if (c.has("drift.coeffs")) {
    e.model.drift = DriftSpec::polynomial(c.get_list("drift.coeffs", {}));
  } else {
    e.model.drift = DriftSpec::canonical(static_cast<int>(c.get_int("drift.q", 3)));
  }
  const std::string kind = c.get_string("diffusion.kind", "linear");
  const double delta = c.get_double("diffusion.delta", 0.0);
  if (kind == "linear") {
    e.model.diffusion = DiffusionSpec::linear(delta);
  } else if (kind == "smoothed_sqrt") {
    e.model.diffusion = DiffusionSpec::smoothed_sqrt(delta);
  } else {
    throw ConfigError("unknown diffusion.kind '" + kind + "' (expected linear | smoothed_sqrt)");
  }

  e.ic.preset = c.get_string("ic.preset", e.ic.preset);
  if (e.ic.preset != "tanh_circle" && e.ic.preset != "zero" && e.ic.preset != "constant" && e.ic.preset != "sine") {
    throw ConfigError("unknown ic.preset '" + e.ic.preset + "'");
  }
  e.ic.r0 = c.get_double("ic.r0", e.ic.r0);
  e.ic.eps = c.get_double("ic.eps", e.ic.eps);
  if (!(e.ic.eps > 0.0)) throw InvalidParameter("ic.eps must be > 0");
  e.ic.value = c.get_double("ic.value", e.ic.value);
  const std::string proj = c.get_string("ic.projection", "l2");
  if (proj != "l2" && proj != "nodal") throw ConfigError("ic.projection must be l2 or nodal");
  e.ic.nodal = proj == "nodal";

  e.T = c.get_double("time.T", e.T);
  e.tau = c.get_double("time.tau", e.tau);
  e.tau_levels = c.get_list("time.tau_levels", e.tau_levels);
  e.tau_fine = c.get_double("time.tau_fine", e.tau_fine);
  if (!(e.T > 0.0) || !(e.tau > 0.0) || !(e.tau_fine > 0.0)) throw InvalidParameter("time values must be > 0");

  const long long samples = c.get_int("mc.samples", static_cast<long long>(e.samples));
  if (samples < 1) throw InvalidParameter("mc.samples must be >= 1");
  e.samples = static_cast<std::size_t>(samples);
  e.seed = c.get_u64("mc.seed", e.seed);
  const long long budget = c.get_int("mc.failure_budget", 0);
  if (budget < 0) throw InvalidParameter("mc.failure_budget must be >= 0");
  e.failure_budget = static_cast<std::size_t>(budget);
  const long long threads = c.get_int("mc.threads", 1);
  if (threads < 1) throw InvalidParameter("mc.threads must be >= 1");
  e.threads = static_cast<unsigned>(threads);

  e.scheme = parse_scheme(c.get_string("scheme.kind", "milstein"));
  e.reference_scheme = parse_scheme(c.get_string("scheme.reference", "milstein"));
  {
    std::stringstream ss(c.get_string("scheme.compare", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
      if (!item.empty()) e.compare_schemes.push_back(parse_scheme(item));
    }
  }

  e.newton_tol = c.get_double("solver.newton_tol", e.newton_tol);
  e.newton_max_iter = static_cast<int>(c.get_int("solver.newton_max_iter", e.newton_max_iter));
  const std::string lin = c.get_string("solver.linear", "direct");
  if (lin == "direct") {
    e.linear_solver = LinearSolverKind::kDirect;
  } else if (lin == "iterative") {
    e.linear_solver = LinearSolverKind::kIterative;
  } else {
    throw ConfigError("solver.linear must be direct or iterative");
  }
  if (!(e.newton_tol > 0.0)) throw InvalidParameter("solver.newton_tol must be > 0");
  if (e.newton_max_iter < 1) throw InvalidParameter("solver.newton_max_iter must be >= 1");

  e.out_dir = c.get_string("output.dir", e.out_dir);
  e.snapshot_times = c.get_list("output.snapshot_times", e.snapshot_times);
  e.average_field = c.get_bool("output.average_field", false);

  e.convergence_mode = c.get_string("convergence.mode", "time");
  if (e.convergence_mode != "time" && e.convergence_mode != "space") {
    throw ConfigError("convergence.mode must be time or space");
  }
  e.space_levels = c.get_list("space.n_div_levels", e.space_levels);
  e.space_reference = static_cast<int>(c.get_int("space.n_div_reference", e.space_reference));
  return e;
}

// ---------------------------------------------------------------------------
// Shared helpers

inline ScalarField2D initial_condition_function(const ExperimentConfig& cfg) {
  const auto& ic = cfg.ic;
  if (ic.preset == "tanh_circle") {
    return TanhCircle{ic.r0, ic.eps};
  }
  if (ic.preset == "zero") return [](double, double) { return 0.0; };
  if (ic.preset == "constant") {
    const double v = ic.value;
    return [v](double, double) { return v; };
  }
  // sine: first Dirichlet eigenfunction of the square
  const double x0 = cfg.mesh.origin.x, y0 = cfg.mesh.origin.y, L = cfg.mesh.side, a = ic.value;
  return [=](double x, double y) {
    return a * std::sin(std::numbers::pi * (x - x0) / L) * std::sin(std::numbers::pi * (y - y0) / L);
  };
}

/// u_h^0 = P_h u0 (or I_h u0 when ic.projection = nodal).
inline Field initial_field(const ExperimentConfig& cfg, const P1Space& space) {
  const ScalarField2D u0 = initial_condition_function(cfg);
  return cfg.ic.nodal ? interpolate_nodal(u0, space.mesh()) : l2_project(u0, space);
}

inline Mesh build_mesh(const ExperimentConfig& cfg) {
  return build_structured_mesh(cfg.mesh.side, cfg.mesh.n_div, cfg.mesh.origin);
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Runs fn(state, i) for i in [0, n) over `threads` workers, each owning a
/// state from make_state(). Results must be written to per-index slots.
template <typename MakeState, typename Fn>
void for_each_sample(std::size_t n, unsigned threads, MakeState&& make_state, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    auto state = make_state();
    for (std::size_t i = 0; i < n; ++i) fn(state, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      try {
        auto state = make_state();
        for (std::size_t i = next++; i < n; i = next++) fn(state, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct SampleFailure {
  std::size_t sample_id;
  std::string message;
};

inline std::string describe_failures(const std::vector<SampleFailure>& failures) {
  std::string s;
  for (const auto& f : failures) s += "\n  sample " + std::to_string(f.sample_id) + ": " + f.message;
  return s;
}

// ---------------------------------------------------------------------------
// Rates

/// order_k = log2(err_{k-1} / err_k) for consecutive halvings of tau.
inline std::vector<double> estimate_rate(const std::vector<double>& errors, const std::vector<double>& taus) {
  if (errors.size() != taus.size()) throw InvalidParameter("estimate_rate: errors and taus differ in length");
  if (errors.size() < 2) throw InvalidParameter("estimate_rate: need at least 2 levels");
  for (double e : errors) {
    if (!(e > 0.0) || !std::isfinite(e)) throw InvalidParameter("estimate_rate: errors must be positive and finite");
  }
  for (std::size_t k = 1; k < taus.size(); ++k) {
    if (!(taus[k] > 0.0) || std::abs(taus[k - 1] / taus[k] - 2.0) > 1e-9) {
      throw InvalidParameter("estimate_rate: taus must decrease by a factor of 2");
    }
  }
  std::vector<double> orders;
  for (std::size_t k = 1; k < errors.size(); ++k) orders.push_back(std::log2(errors[k - 1] / errors[k]));
  return orders;
}

struct RateRow {
  double tau = 0.0;
  double err_linf_el2 = 0.0;
  double se_linf_el2 = 0.0;
  std::optional<double> order_linf_el2;
  double err_el2h1 = 0.0;
  double se_el2h1 = 0.0;
  std::optional<double> order_el2h1;
};

struct RateTable {
  std::vector<RateRow> rows;
  Scheme scheme = Scheme::kMilstein;
  Scheme reference_scheme = Scheme::kMilstein;
  std::size_t samples_used = 0;
  std::size_t failures = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  double h = 0.0;
  double reference_tau = 0.0;
};

inline void fill_orders(RateTable& table) {
  for (std::size_t k = 1; k < table.rows.size(); ++k) {
    auto& prev = table.rows[k - 1];
    auto& row = table.rows[k];
    const bool halving = std::abs(prev.tau / row.tau - 2.0) <= 1e-9;
    if (halving && prev.err_linf_el2 > 0.0 && row.err_linf_el2 > 0.0) {
      row.order_linf_el2 = estimate_rate({prev.err_linf_el2, row.err_linf_el2}, {prev.tau, row.tau})[0];
    }
    if (halving && prev.err_el2h1 > 0.0 && row.err_el2h1 > 0.0) {
      row.order_el2h1 = estimate_rate({prev.err_el2h1, row.err_el2h1}, {prev.tau, row.tau})[0];
    }
  }
}

inline void write_rate_table_csv(std::ostream& os, const RateTable& t) {
  write_comments(os, {"config_hash=" + hex64(t.config_hash), "seed=" + std::to_string(t.seed),
                      "scheme=" + std::string(to_string(t.scheme)),
                      "reference_scheme=" + std::string(to_string(t.reference_scheme)), "h=" + format_real(t.h),
                      "reference_tau=" + format_real(t.reference_tau), "samples=" + std::to_string(t.samples_used),
                      "failures=" + std::to_string(t.failures)});
  os << "tau,err_linf_el2,se_linf_el2,order_linf_el2,err_el2h1,se_el2h1,order_el2h1\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (const auto& r : t.rows) {
    os << format_real(r.tau) << ',' << format_real(r.err_linf_el2) << ',' << format_real(r.se_linf_el2) << ','
       << opt(r.order_linf_el2) << ',' << format_real(r.err_el2h1) << ',' << format_real(r.se_el2h1) << ','
       << opt(r.order_el2h1) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Strong error study on coupled Brownian paths

namespace detail {

struct LevelPlan {
  double tau;
  std::size_t factor;  // tau / tau_fine
  std::size_t steps;
};

inline std::vector<LevelPlan> plan_levels(const ExperimentConfig& cfg, std::size_t& n_fine) {
  if (cfg.tau_levels.size() < 2) throw InvalidParameter("convergence study needs at least 2 tau levels");
  n_fine = cfg.scheme_config(cfg.tau_fine, cfg.reference_scheme).steps();
  std::vector<LevelPlan> plan;
  for (double tau : cfg.tau_levels) {
    const double ratio = tau / cfg.tau_fine;
    const double f = std::round(ratio);
    if (f < 1.0 || std::abs(ratio - f) > 1e-9 * f) {
      throw InvalidParameter("tau level " + format_real(tau) + " is not an integer multiple of tau_fine");
    }
    const auto factor = static_cast<std::size_t>(f);
    if ((factor & (factor - 1)) != 0) {
      throw InvalidParameter("tau level " + format_real(tau) + " is not tau_fine times a power of 2");
    }
    if (n_fine % factor != 0) throw InvalidParameter("tau level " + format_real(tau) + " does not divide T");
    plan.push_back({tau, factor, n_fine / factor});
  }
  return plan;
}

struct SampleErrors {
  bool ok = false;
  // [scheme][level][n] squared L2 error, and [scheme][level] sum_n tau |grad e|^2
  std::vector<std::vector<std::vector<double>>> l2sq;
  std::vector<std::vector<double>> h1sum;
};

struct StudyWorker {
  std::unique_ptr<StepWorkspace> reference;
  std::vector<std::vector<std::unique_ptr<StepWorkspace>>> coarse;  // [scheme][level]
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Standard error of sqrt(mean(x)) by the delta method.
inline double sqrt_mean_se(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const double m = mean_of(x);
  if (!(m > 0.0)) return 0.0;
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const double se_mean = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  return se_mean / (2.0 * std::sqrt(m));
}

}  // namespace detail

/// Strong errors of each scheme against a same-path reference at tau_fine.
/// Returns one table per scheme in `schemes` order.
inline std::vector<RateTable> strong_error_study(const ExperimentConfig& cfg, const std::vector<Scheme>& schemes) {
  if (schemes.empty()) throw InvalidParameter("strong_error_study: no scheme selected");
  std::size_t n_fine = 0;
  const auto plan = detail::plan_levels(cfg, n_fine);
  std::size_t stride = plan.front().factor;
  for (const auto& lv : plan) stride = std::min(stride, lv.factor);

  const Mesh mesh = build_mesh(cfg);
  const P1Space space(mesh);
  const Field u0 = initial_field(cfg, space);
  const Vector u0_free = u0.free_values();
  const SparseMatrix& M = space.mass().matrix();
  const SparseMatrix& K = space.stiffness().matrix();

  std::vector<detail::SampleErrors> results(cfg.samples);
  std::vector<std::string> messages(cfg.samples);

  auto make_worker = [&] {
    detail::StudyWorker w;
    w.reference = std::make_unique<StepWorkspace>(space, cfg.model, cfg.scheme_config(cfg.tau_fine, cfg.reference_scheme));
    w.coarse.resize(schemes.size());
    for (std::size_t s = 0; s < schemes.size(); ++s) {
      for (const auto& lv : plan) {
        w.coarse[s].push_back(std::make_unique<StepWorkspace>(space, cfg.model, cfg.scheme_config(lv.tau, schemes[s])));
      }
    }
    return w;
  };

  auto run_sample = [&](detail::StudyWorker& w, std::size_t sample) {
    detail::SampleErrors& out = results[sample];
    try {
      const BrownianPath path = generate_path(cfg.seed, sample, n_fine, cfg.tau_fine);
      std::vector<Vector> ref(n_fine / stride + 1);
      integrate(u0_free, path.increments, cfg.reference_scheme, *w.reference, [&](std::size_t n, const Vector& u) {
        if (n % stride == 0) ref[n / stride] = u;
      });
      out.l2sq.assign(schemes.size(), {});
      out.h1sum.assign(schemes.size(), {});
      for (std::size_t s = 0; s < schemes.size(); ++s) {
        for (std::size_t k = 0; k < plan.size(); ++k) {
          const auto& lv = plan[k];
          const std::vector<double> dW = coarsen_increments(path, lv.factor);
          std::vector<double> l2(lv.steps + 1, 0.0);
          double h1 = 0.0;
          const std::size_t step_ratio = lv.factor / stride;
          integrate(u0_free, dW, schemes[s], *w.coarse[s][k], [&](std::size_t n, const Vector& u) {
            const Vector e = u - ref[n * step_ratio];
            l2[n] = e.dot(M * e);
            if (n > 0) h1 += lv.tau * e.dot(K * e);
          });
          out.l2sq[s].push_back(std::move(l2));
          out.h1sum[s].push_back(h1);
        }
      }
      out.ok = true;
    } catch (const NumericalError& e) {
      out = {};
      messages[sample] = e.what();
    }
  };

  for_each_sample(cfg.samples, cfg.threads, make_worker, run_sample);

  std::vector<SampleFailure> failures;
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    if (results[i].ok) {
      good.push_back(i);
    } else {
      failures.push_back({i, messages[i]});
    }
  }
  if (failures.size() > cfg.failure_budget || good.empty()) {
    throw NumericalError("strong_error_study: " + std::to_string(failures.size()) +
                         " failed samples exceed the failure budget of " + std::to_string(cfg.failure_budget) +
                         describe_failures(failures));
  }

  std::vector<RateTable> tables;
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    RateTable t;
    t.scheme = schemes[s];
    t.reference_scheme = cfg.reference_scheme;
    t.samples_used = good.size();
    t.failures = failures.size();
    t.seed = cfg.seed;
    t.config_hash = cfg.hash();
    t.h = cfg.mesh.h();
    t.reference_tau = cfg.tau_fine;
    for (std::size_t k = 0; k < plan.size(); ++k) {
      RateRow row;
      row.tau = plan[k].tau;
      // sup over n of the sample mean, then sqrt
      double best = 0.0;
      std::size_t best_n = 0;
      for (std::size_t n = 0; n <= plan[k].steps; ++n) {
        double acc = 0.0;
        for (std::size_t i : good) acc += results[i].l2sq[s][k][n];
        const double m = acc / static_cast<double>(good.size());
        if (m > best) {
          best = m;
          best_n = n;
        }
      }
      std::vector<double> at_best, h1;
      for (std::size_t i : good) {
        at_best.push_back(results[i].l2sq[s][k][best_n]);
        h1.push_back(results[i].h1sum[s][k]);
      }
      row.err_linf_el2 = std::sqrt(best);
      row.se_linf_el2 = detail::sqrt_mean_se(at_best);
      row.err_el2h1 = std::sqrt(std::max(0.0, detail::mean_of(h1)));
      row.se_el2h1 = detail::sqrt_mean_se(h1);
      t.rows.push_back(row);
    }
    fill_orders(t);
    tables.push_back(std::move(t));
  }
  return tables;
}

inline RateTable strong_error_study(const ExperimentConfig& cfg) { return strong_error_study(cfg, {cfg.scheme}).front(); }

// ---------------------------------------------------------------------------
// Spatial refinement study (fine-mesh reference, nodal restriction)

struct SpatialRow {
  int n_div = 0;
  double h = 0.0;
  double err_linf_el2 = 0.0;
  double se_linf_el2 = 0.0;
  std::optional<double> order;
};

struct SpatialTable {
  std::vector<SpatialRow> rows;
  int reference_n_div = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t samples_used = 0;
};

/// Error sup_n E||I_h u_ref^n - u_h^n||^2 between each coarse mesh and a
/// reference mesh that refines it, all on the same Brownian path and tau.
inline SpatialTable spatial_error_study(const ExperimentConfig& cfg) {
  const int nref = cfg.space_reference;
  std::vector<int> levels;
  for (double v : cfg.space_levels) {
    const int n = static_cast<int>(std::lround(v));
    if (n < 1 || nref % n != 0) {
      throw InvalidParameter("space.n_div_levels entries must divide space.n_div_reference");
    }
    levels.push_back(n);
  }
  if (levels.size() < 2) throw InvalidParameter("space study needs at least 2 mesh levels");
  const SchemeConfig sc = cfg.scheme_config(cfg.tau, cfg.scheme);
  const std::size_t N = sc.steps();

  const Mesh ref_mesh = build_structured_mesh(cfg.mesh.side, nref, cfg.mesh.origin);
  const P1Space ref_space(ref_mesh);
  const ScalarField2D u0 = initial_condition_function(cfg);
  const Field ref_u0 = cfg.ic.nodal ? interpolate_nodal(u0, ref_mesh) : l2_project(u0, ref_space);

  struct Level {
    Mesh mesh;
    std::unique_ptr<P1Space> space;
    Field u0;
    std::vector<int> fine_vertex;  // coarse vertex -> reference vertex
  };
  std::vector<Level> lv(levels.size());
  for (std::size_t k = 0; k < levels.size(); ++k) {
    lv[k].mesh = build_structured_mesh(cfg.mesh.side, levels[k], cfg.mesh.origin);
    lv[k].space = std::make_unique<P1Space>(lv[k].mesh);
    lv[k].u0 = cfg.ic.nodal ? interpolate_nodal(u0, lv[k].mesh) : l2_project(u0, *lv[k].space);
    const int r = nref / levels[k];
    for (int j = 0; j <= levels[k]; ++j)
      for (int i = 0; i <= levels[k]; ++i) lv[k].fine_vertex.push_back((j * r) * (nref + 1) + i * r);
  }

  std::vector<std::vector<std::vector<double>>> err(cfg.samples);  // [sample][level][n]
  std::vector<std::string> messages(cfg.samples);
  auto make_state = [&] {
    std::vector<std::unique_ptr<StepWorkspace>> ws;
    ws.push_back(std::make_unique<StepWorkspace>(ref_space, cfg.model, sc));
    for (auto& l : lv) ws.push_back(std::make_unique<StepWorkspace>(*l.space, cfg.model, sc));
    return ws;
  };
  auto run = [&](std::vector<std::unique_ptr<StepWorkspace>>& ws, std::size_t sample) {
    try {
      const BrownianPath path = generate_path(cfg.seed, sample, N, cfg.tau);
      std::vector<Vector> ref(N + 1);
      integrate(ref_u0.free_values(), path.increments, cfg.scheme, *ws[0],
                [&](std::size_t n, const Vector& u) { ref[n] = u; });
      std::vector<std::vector<double>> e(levels.size(), std::vector<double>(N + 1, 0.0));
      for (std::size_t k = 0; k < levels.size(); ++k) {
        const Mesh& m = lv[k].mesh;
        const SparseMatrix& Mk = lv[k].space->mass().matrix();
        integrate(lv[k].u0.free_values(), path.increments, cfg.scheme, *ws[k + 1], [&](std::size_t n, const Vector& u) {
          Vector d(u.size());
          for (std::size_t f = 0; f < m.num_free(); ++f) {
            const int cv = m.vertex_of_free(static_cast<int>(f));
            const int fv = lv[k].fine_vertex[static_cast<std::size_t>(cv)];
            d[static_cast<Eigen::Index>(f)] = u[static_cast<Eigen::Index>(f)] - ref[n][ref_mesh.free_index(fv)];
          }
          e[k][n] = d.dot(Mk * d);
        });
      }
      err[sample] = std::move(e);
    } catch (const NumericalError& ex) {
      err[sample].clear();
      messages[sample] = ex.what();
    }
  };
  for_each_sample(cfg.samples, cfg.threads, make_state, run);

  std::vector<SampleFailure> failures;
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    if (!err[i].empty()) {
      good.push_back(i);
    } else {
      failures.push_back({i, messages[i]});
    }
  }
  if (failures.size() > cfg.failure_budget || good.empty()) {
    throw NumericalError("spatial_error_study: failures exceed budget" + describe_failures(failures));
  }
  SpatialTable t;
  t.reference_n_div = nref;
  t.seed = cfg.seed;
  t.config_hash = cfg.hash();
  t.samples_used = good.size();
  for (std::size_t k = 0; k < levels.size(); ++k) {
    SpatialRow row;
    row.n_div = levels[k];
    row.h = cfg.mesh.side / levels[k];
    double best = 0.0;
    std::size_t best_n = 0;
    for (std::size_t n = 0; n <= N; ++n) {
      double acc = 0.0;
      for (std::size_t i : good) acc += err[i][k][n];
      const double m = acc / static_cast<double>(good.size());
      if (m > best) {
        best = m;
        best_n = n;
      }
    }
    std::vector<double> at_best;
    for (std::size_t i : good) at_best.push_back(err[i][k][best_n]);
    row.err_linf_el2 = std::sqrt(best);
    row.se_linf_el2 = detail::sqrt_mean_se(at_best);
    if (k > 0 && t.rows.back().err_linf_el2 > 0.0 && row.err_linf_el2 > 0.0) {
      row.order = std::log(t.rows.back().err_linf_el2 / row.err_linf_el2) / std::log(t.rows.back().h / row.h);
    }
    t.rows.push_back(row);
  }
  return t;
}

inline void write_spatial_table_csv(std::ostream& os, const SpatialTable& t) {
  write_comments(os, {"config_hash=" + hex64(t.config_hash), "seed=" + std::to_string(t.seed),
                      "reference_n_div=" + std::to_string(t.reference_n_div),
                      "samples=" + std::to_string(t.samples_used)});
  os << "n_div,h,err_linf_el2,se_linf_el2,order_linf_el2\n";
  for (const auto& r : t.rows) {
    os << r.n_div << ',' << format_real(r.h) << ',' << format_real(r.err_linf_el2) << ','
       << format_real(r.se_linf_el2) << ',' << (r.order ? format_real(*r.order) : std::string()) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Moment stability

struct StabilityRow {
  double t = 0.0;
  double mean_l2sq = 0.0, min_l2sq = 0.0, max_l2sq = 0.0;
  double mean_h1sq = 0.0, min_h1sq = 0.0, max_h1sq = 0.0;
  double mean_l2_p4 = 0.0, mean_l2_p8 = 0.0;  // E||u||^4, E||u||^8
  double mean_h1_p4 = 0.0;                    // E||grad u||^4
};

struct StabilitySeries {
  std::vector<StabilityRow> rows;
  std::size_t samples_used = 0;
  std::size_t divergences = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  double tau = 0.0;
  double h = 0.0;
  int max_newton_iterations = 0;
};

/// Per-step sample statistics of ||u||^2 and ||grad u||^2 over independent paths.
inline StabilitySeries stability_study(const ExperimentConfig& cfg) {
  const SchemeConfig sc = cfg.scheme_config(cfg.tau, cfg.scheme);
  const std::size_t N = sc.steps();
  const Mesh mesh = build_mesh(cfg);
  const P1Space space(mesh);
  const Vector u0 = initial_field(cfg, space).free_values();
  const SparseMatrix& M = space.mass().matrix();
  const SparseMatrix& K = space.stiffness().matrix();

  struct Sample {
    std::vector<double> l2sq, h1sq;
    int max_its = 0;
  };
  std::vector<Sample> res(cfg.samples);
  std::vector<std::string> messages(cfg.samples);
  for_each_sample(
      cfg.samples, cfg.threads, [&] { return std::make_unique<StepWorkspace>(space, cfg.model, sc); },
      [&](std::unique_ptr<StepWorkspace>& ws, std::size_t sample) {
        Sample s;
        try {
          const BrownianPath path = generate_path(cfg.seed, sample, N, cfg.tau);
          std::vector<int> its;
          integrate(u0, path.increments, cfg.scheme, *ws, [&](std::size_t, const Vector& u) {
            s.l2sq.push_back(u.dot(M * u));
            s.h1sq.push_back(u.dot(K * u));
          }, &its);
          for (int i : its) s.max_its = std::max(s.max_its, i);
          res[sample] = std::move(s);
        } catch (const NumericalError& e) {
          res[sample] = {};
          messages[sample] = e.what();
        }
      });

  StabilitySeries out;
  out.seed = cfg.seed;
  out.config_hash = cfg.hash();
  out.tau = cfg.tau;
  out.h = cfg.mesh.h();
  std::vector<SampleFailure> failures;
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    if (res[i].l2sq.size() == N + 1) {
      good.push_back(i);
      out.max_newton_iterations = std::max(out.max_newton_iterations, res[i].max_its);
    } else {
      failures.push_back({i, messages[i]});
    }
  }
  out.divergences = failures.size();
  out.samples_used = good.size();
  if (failures.size() > cfg.failure_budget || good.empty()) {
    throw NumericalError("stability_study: " + std::to_string(failures.size()) +
                         " diverged samples exceed the failure budget of " + std::to_string(cfg.failure_budget) +
                         describe_failures(failures));
  }
  const double inv = 1.0 / static_cast<double>(good.size());
  for (std::size_t n = 0; n <= N; ++n) {
    StabilityRow r;
    r.t = static_cast<double>(n) * cfg.tau;
    r.min_l2sq = r.min_h1sq = INFINITY;
    r.max_l2sq = r.max_h1sq = -INFINITY;
    for (std::size_t i : good) {
      const double a = res[i].l2sq[n], b = res[i].h1sq[n];
      r.mean_l2sq += a * inv;
      r.mean_h1sq += b * inv;
      r.mean_l2_p4 += a * a * inv;
      r.mean_l2_p8 += a * a * a * a * inv;
      r.mean_h1_p4 += b * b * inv;
      r.min_l2sq = std::min(r.min_l2sq, a);
      r.max_l2sq = std::max(r.max_l2sq, a);
      r.min_h1sq = std::min(r.min_h1sq, b);
      r.max_h1sq = std::max(r.max_h1sq, b);
    }
    // Summing means incrementally can round just outside [min, max].
    r.mean_l2sq = std::clamp(r.mean_l2sq, r.min_l2sq, r.max_l2sq);
    r.mean_h1sq = std::clamp(r.mean_h1sq, r.min_h1sq, r.max_h1sq);
    out.rows.push_back(r);
  }
  return out;
}

inline void write_stability_csv(std::ostream& os, const StabilitySeries& s) {
  write_comments(os, {"config_hash=" + hex64(s.config_hash), "seed=" + std::to_string(s.seed),
                      "tau=" + format_real(s.tau), "h=" + format_real(s.h),
                      "samples=" + std::to_string(s.samples_used), "divergences=" + std::to_string(s.divergences),
                      "max_newton_iterations=" + std::to_string(s.max_newton_iterations)});
  os << "t,mean_l2sq,min_l2sq,max_l2sq,mean_h1sq,min_h1sq,max_h1sq,mean_l2_p4,mean_l2_p8,mean_h1_p4\n";
  for (const auto& r : s.rows) {
    os << format_real(r.t) << ',' << format_real(r.mean_l2sq) << ',' << format_real(r.min_l2sq) << ','
       << format_real(r.max_l2sq) << ',' << format_real(r.mean_h1sq) << ',' << format_real(r.min_h1sq) << ','
       << format_real(r.max_h1sq) << ',' << format_real(r.mean_l2_p4) << ',' << format_real(r.mean_l2_p8) << ','
       << format_real(r.mean_h1_p4) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evolution snapshots

struct Snapshot {
  double t = 0.0;
  std::size_t step = 0;
  Field field;
  std::vector<Segment> level_set;
};

struct EvolutionResult {
  std::unique_ptr<Mesh> mesh;  // owned so snapshot fields stay valid
  std::vector<Snapshot> snapshots;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t samples_used = 0;
};

/// Fields and zero level sets at the configured times, for sample 0 or the
/// sample-averaged field when output.average_field is set.
inline EvolutionResult evolution_study(const ExperimentConfig& cfg) {
  const SchemeConfig sc = cfg.scheme_config(cfg.tau, cfg.scheme);
  const std::size_t N = sc.steps();
  EvolutionResult out;
  out.mesh = std::make_unique<Mesh>(build_mesh(cfg));
  out.seed = cfg.seed;
  out.config_hash = cfg.hash();
  const Mesh& mesh = *out.mesh;
  const P1Space space(mesh);
  const Vector u0 = initial_field(cfg, space).free_values();

  std::vector<std::size_t> steps;
  for (double t : cfg.snapshot_times) {
    const double n = t / cfg.tau;
    const double r = std::round(n);
    if (r < 0.0 || std::abs(n - r) > 1e-9 * std::max(1.0, r) || static_cast<std::size_t>(r) > N) {
      throw InvalidParameter("snapshot time " + format_real(t) + " is not a step time in [0, T]");
    }
    steps.push_back(static_cast<std::size_t>(r));
  }
  std::map<std::size_t, std::size_t> slot;  // step -> index into steps
  for (std::size_t k = 0; k < steps.size(); ++k) slot.emplace(steps[k], k);
  const std::size_t max_step = steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());

  const std::size_t n_samples = cfg.average_field ? cfg.samples : 1;
  std::vector<std::vector<Vector>> per_sample(n_samples);
  for_each_sample(
      n_samples, cfg.threads, [&] { return std::make_unique<StepWorkspace>(space, cfg.model, sc); },
      [&](std::unique_ptr<StepWorkspace>& ws, std::size_t sample) {
        const BrownianPath path = generate_path(cfg.seed, sample, N, cfg.tau);
        std::vector<double> dW(path.increments.begin(), path.increments.begin() + static_cast<std::ptrdiff_t>(max_step));
        std::vector<Vector> snaps(steps.size());
        integrate(u0, dW, cfg.scheme, *ws, [&](std::size_t n, const Vector& u) {
          for (std::size_t k = 0; k < steps.size(); ++k)
            if (steps[k] == n) snaps[k] = u;
        });
        per_sample[sample] = std::move(snaps);
      });
  out.samples_used = n_samples;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    Vector acc = Vector::Zero(static_cast<Eigen::Index>(mesh.num_free()));
    for (std::size_t i = 0; i < n_samples; ++i) acc += per_sample[i][k];
    acc /= static_cast<double>(n_samples);
    Snapshot s;
    s.t = static_cast<double>(steps[k]) * cfg.tau;
    s.step = steps[k];
    s.field = Field::from_free(mesh, acc);
    s.level_set = zero_level_set(s.field);
    out.snapshots.push_back(std::move(s));
  }
  return out;
}

inline std::string snapshot_tag(const Snapshot& s) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "t%.6f", s.t);
  return buf;
}

/// Writes field_<tag>.csv and levelset_<tag>.csv per snapshot.
inline std::vector<std::filesystem::path> write_evolution(const std::filesystem::path& dir, const EvolutionResult& r) {
  std::vector<std::filesystem::path> written;
  for (const auto& s : r.snapshots) {
    const std::vector<std::string> comments{"config_hash=" + hex64(r.config_hash), "seed=" + std::to_string(r.seed),
                                            "t=" + format_real(s.t), "samples=" + std::to_string(r.samples_used)};
    const auto fpath = dir / ("field_" + snapshot_tag(s) + ".csv");
    auto fos = open_output(fpath);
    write_field_csv(fos, s.field, comments);
    const auto lpath = dir / ("levelset_" + snapshot_tag(s) + ".csv");
    auto los = open_output(lpath);
    write_level_set_csv(los, s.level_set, comments);
    written.push_back(fpath);
    written.push_back(lpath);
  }
  return written;
}

}  // namespace spde
