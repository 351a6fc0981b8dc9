#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "spde/config.hpp"
#include "spde/csv.hpp"
#include "spde/experiment.hpp"
#include "spde/fem.hpp"
#include "spde/mesh.hpp"
#include "spde/model.hpp"

namespace spde {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2 };

namespace detail {

struct CommonOptions {
  std::string config_path;
  std::string seed;
  std::string out;
  long long samples = -1;
  std::vector<std::string> overrides;
};

inline void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config_path, "config file (flat key = value)");
  sub->add_option("--seed", o.seed, "unsigned 64-bit seed (mc.seed)");
  sub->add_option("--out", o.out, "output directory (output.dir)");
  sub->add_option("--samples", o.samples, "Monte Carlo sample count (mc.samples)");
  sub->add_option("--set", o.overrides, "override, key=value (repeatable)")->take_all();
}

inline ExperimentConfig resolve(const CommonOptions& o) {
  Config c = o.config_path.empty() ? Config{} : Config::load(o.config_path);
  for (const auto& s : o.overrides) c.apply_override(s);
  if (!o.seed.empty()) c.set("mc.seed", std::to_string(Config::parse_u64(o.seed, "--seed")));
  if (!o.out.empty()) c.set("output.dir", o.out);
  if (o.samples >= 0) c.set("mc.samples", std::to_string(o.samples));
  return ExperimentConfig::from_config(c);
}

inline void print_rate_table(std::ostream& os, const RateTable& t) {
  os << "scheme " << to_string(t.scheme) << " (" << t.samples_used << " samples, reference tau "
     << format_real(t.reference_tau) << ")\n";
  for (const auto& r : t.rows) {
    os << "  tau=" << format_real(r.tau) << "  LinfEL2=" << format_real(r.err_linf_el2)
       << "  order=" << (r.order_linf_el2 ? format_real(*r.order_linf_el2) : "-")
       << "  EL2H1=" << format_real(r.err_el2h1)
       << "  order=" << (r.order_el2h1 ? format_real(*r.order_el2h1) : "-") << '\n';
  }
}

inline int run_convergence(const ExperimentConfig& cfg) {
  const std::filesystem::path dir = cfg.out_dir;
  if (cfg.convergence_mode == "space") {
    const SpatialTable t = spatial_error_study(cfg);
    auto os = open_output(dir / "space_table.csv");
    write_spatial_table_csv(os, t);
    for (const auto& r : t.rows) {
      std::cout << "n_div=" << r.n_div << "  LinfEL2=" << format_real(r.err_linf_el2)
                << "  order=" << (r.order ? format_real(*r.order) : "-") << '\n';
    }
    return kExitOk;
  }
  std::vector<Scheme> schemes{cfg.scheme};
  for (Scheme s : cfg.compare_schemes)
    if (s != cfg.scheme) schemes.push_back(s);
  const auto tables = strong_error_study(cfg, schemes);
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const std::string name = i == 0 ? "rate_table.csv" : "rate_table_" + std::string(to_string(tables[i].scheme)) + ".csv";
    auto os = open_output(dir / name);
    write_rate_table_csv(os, tables[i]);
    print_rate_table(std::cout, tables[i]);
  }
  return kExitOk;
}

inline int run_stability(const ExperimentConfig& cfg) {
  const StabilitySeries s = stability_study(cfg);
  auto os = open_output(std::filesystem::path(cfg.out_dir) / "stability.csv");
  write_stability_csv(os, s);
  std::cout << "stability: " << s.rows.size() << " time points, " << s.samples_used << " samples, "
            << s.divergences << " divergences, max Newton iterations " << s.max_newton_iterations << '\n';
  if (s.max_newton_iterations > 10) {
    std::cerr << "warning: Newton needed " << s.max_newton_iterations << " iterations in some step\n";
  }
  return kExitOk;
}

inline int run_evolve(const ExperimentConfig& cfg) {
  const EvolutionResult r = evolution_study(cfg);
  const auto files = write_evolution(cfg.out_dir, r);
  for (const auto& s : r.snapshots) {
    const RadiusStats rs = level_set_radius(s.level_set);
    std::cout << "t=" << format_real(s.t) << "  segments=" << s.level_set.size()
              << "  mean_radius=" << format_real(rs.mean) << '\n';
  }
  std::cout << "wrote " << files.size() << " files to " << cfg.out_dir << '\n';
  return kExitOk;
}

inline int run_validate_mesh(const ExperimentConfig& cfg, bool write_report) {
  const Mesh mesh = build_mesh(cfg);
  const MeshConditionReport rep = check_mesh_condition(mesh);
  const DominanceReport dom = check_diagonal_dominance(assemble_stiffness(mesh));
  std::cout << "mesh: " << mesh.num_vertices() << " vertices, " << mesh.num_triangles() << " triangles, "
            << mesh.interior_edges().size() << " interior edges, " << mesh.num_free() << " free dofs\n";
  std::cout << "angle condition: " << (rep.pass ? "pass" : "FAIL") << " (min cot sum "
            << format_real(rep.worst_cot_sum) << ")\n";
  std::cout << "stiffness diagonal dominance: " << (dom.pass ? "pass" : "FAIL") << " (worst row " << dom.worst_row
            << ", margin " << format_real(dom.worst_margin) << ")\n";
  if (write_report) {
    auto os = open_output(std::filesystem::path(cfg.out_dir) / "mesh_report.csv");
    os << "v0,v1,cot_sum,pass\n";
    for (const auto& e : rep.edges) {
      os << e.vertices[0] << ',' << e.vertices[1] << ',' << format_real(e.cot_sum) << ',' << (e.pass ? 1 : 0) << '\n';
    }
  }
  return rep.pass && dom.pass ? kExitOk : kExitNumerical;
}

inline int run_validate_model(const ExperimentConfig& cfg) {
  constexpr std::size_t kSamples = 10000;
  const double mu = validate_one_sided_lipschitz(cfg.model.drift, kSamples);
  const bool mu_ok = mu <= cfg.model.drift.c0() + 1e-9;
  std::cout << "drift one-sided Lipschitz estimate mu = " << format_real(mu) << " (c0 = "
            << format_real(cfg.model.drift.c0()) << ") " << (mu_ok ? "ok" : "VIOLATED") << '\n';
  const DiffusionReport d = validate_diffusion_assumptions(cfg.model.diffusion, kSamples);
  std::cout << "diffusion: Lipschitz " << format_real(d.lipschitz) << ", linear growth " << format_real(d.linear_growth)
            << ", sup|DG| " << format_real(d.dg_bound) << ", sup|D2G| " << format_real(d.d2g_bound)
            << ", DG*G Lipschitz " << format_real(d.composite_lipschitz) << ", (DG(u)-DG(v))G(v) Lipschitz "
            << format_real(d.cross_lipschitz) << '\n';
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
  return mu_ok ? kExitOk : kExitNumerical;
}

}  // namespace detail

/// Entry point of the `spde` tool. Returns 0 on success, 1 for usage or
/// configuration errors, 2 for numerical failures.
inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Milstein finite element solver for semilinear SPDEs with multiplicative noise", "spde"};
  app.require_subcommand(1);
  detail::CommonOptions opts;
  bool write_mesh_report = false;
  CLI::App* convergence = app.add_subcommand("convergence", "strong error / rate table study");
  CLI::App* stability = app.add_subcommand("stability", "moment stability time series");
  CLI::App* evolve = app.add_subcommand("evolve", "field and zero level set snapshots");
  CLI::App* vmesh = app.add_subcommand("validate-mesh", "mesh angle condition and M-matrix check");
  CLI::App* vmodel = app.add_subcommand("validate-model", "sampled checks of drift and diffusion assumptions");
  for (CLI::App* sub : {convergence, stability, evolve, vmesh, vmodel}) detail::add_common(sub, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitConfig;
  }

  try {
    const ExperimentConfig cfg = detail::resolve(opts);
    write_mesh_report = !opts.out.empty();
    if (convergence->parsed()) return detail::run_convergence(cfg);
    if (stability->parsed()) return detail::run_stability(cfg);
    if (evolve->parsed()) return detail::run_evolve(cfg);
    if (vmesh->parsed()) return detail::run_validate_mesh(cfg, write_mesh_report);
    if (vmodel->parsed()) return detail::run_validate_model(cfg);
  } catch (const InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace spde
