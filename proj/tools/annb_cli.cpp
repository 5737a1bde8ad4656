// Command-line driver: one adaptive run (or an M* sweep) writing artifacts to --out.
//
// Exit codes: 0 converged, 2 solver failure (non-convergence, refinement conflict),
// 3 configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "annb/harness.hpp"

namespace {

constexpr int kExitSolver = 2;
constexpr int kExitConfig = 3;

annb::AdaptiveConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw annb::ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw annb::ConfigError("config " + path + ": " + e.what());
  }
  // A run manifest can be fed back in directly.
  if (j.contains("config") && j["config"].is_object()) j = j["config"];
  return annb::config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive neural network basis solver"};
  std::string config_path, out = "annb_out";
  std::optional<std::string> problem, strategy;
  std::optional<int> m0, mstar, scale_max, n_max, max_refinements, test_grid;
  std::optional<double> epsilon, radius, gamma, range, tol;
  std::optional<std::uint64_t> seed;
  std::vector<int> sweep;
  bool dump_system = false, dump_points = false, warm_start = false, list = false,
       print_config = false;

  app.add_option("--config", config_path, "flat JSON config or a previous manifest.json");
  app.add_option("--problem", problem, "benchmark name");
  app.add_option("--m0", m0, "basis functions on Omega_0");
  app.add_option("--mstar", mstar, "basis functions per ball");
  app.add_option("--epsilon", epsilon, "mean residual threshold");
  app.add_option("--radius", radius, "ball radius");
  app.add_option("--seed", seed);
  app.add_option("--gamma", gamma, "shape parameter (transferable strategy)");
  app.add_option("--strategy", strategy)->check(CLI::IsMember({"uniform", "transferable"}));
  app.add_option("--R", range, "weight/bias range (uniform strategy)");
  app.add_option("--L", scale_max, "largest candidate scale");
  app.add_option("--n-max", n_max, "Gauss-Newton iteration cap");
  app.add_option("--tol", tol, "Gauss-Newton relative loss tolerance");
  app.add_option("--max-refinements", max_refinements);
  app.add_option("--test-grid", test_grid, "test points per axis");
  app.add_option("--sweep", sweep, "list of M* values, one run each")->delimiter(',');
  app.add_option("--out", out, "output directory");
  app.add_flag("--warm-start", warm_start, "start the coupled solve from the previous state");
  app.add_flag("--dump-system", dump_system, "write F.bin and T.bin of the final system");
  app.add_flag("--dump-points", dump_points, "write collocation sets as CSV");
  app.add_flag("--list", list, "print benchmark names and exit");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (list) {
    for (const auto& n : annb::benchmark_names()) std::cout << n << '\n';
    return 0;
  }

  annb::AdaptiveConfig cfg;
  try {
    if (!config_path.empty())
      cfg = load_config(config_path);
    else
      cfg = annb::AdaptiveConfig::for_benchmark(problem.value_or("peak2d-case1"));
    if (problem) cfg.problem = *problem;
    if (m0) cfg.m0 = *m0;
    if (mstar) cfg.mstar = *mstar;
    if (epsilon) cfg.epsilon = *epsilon;
    if (radius) cfg.radius = *radius;
    if (seed) cfg.seed = *seed;
    if (gamma) cfg.gamma = *gamma;
    if (strategy) cfg.strategy = annb::strategy_from_string(*strategy);
    if (range) cfg.range = *range;
    if (scale_max) cfg.scale_max = *scale_max;
    if (n_max) cfg.n_max = *n_max;
    if (tol) cfg.tol = *tol;
    if (max_refinements) cfg.max_refinements = *max_refinements;
    if (test_grid) cfg.test_grid = *test_grid;
    if (warm_start) cfg.warm_start = true;
    cfg.validate();
    annb::benchmark(cfg.problem);
  } catch (const annb::Error& e) {
    std::cerr << "annb: " << e.what() << '\n';
    return kExitConfig;
  }

  if (print_config) {
    std::cout << annb::config_to_json(cfg).dump(2) << '\n';
    return 0;
  }

  annb::RunOptions opts;
  opts.dump_system = dump_system;
  opts.dump_points = dump_points;
  try {
    if (sweep.empty()) {
      const auto man = annb::run(cfg, out, opts);
      if (man.status != "converged") {
        std::cerr << "annb: " << man.error << '\n';
        return man.failure_code;
      }
      std::printf("%s K=%zu err_l2=%.6e mean_residual=%.6e\n", cfg.problem.c_str(), man.K,
                  *man.err_l2, man.final_mean_residual);
      return 0;
    }
    int rc = 0;
    for (const auto& man : annb::run_sweep(cfg, sweep, out, opts)) {
      if (man.status == "converged") {
        std::printf("mstar=%d K=%zu err_l2=%.6e\n", man.config.mstar, man.K, *man.err_l2);
      } else {
        std::printf("mstar=%d failed: %s\n", man.config.mstar, man.error.c_str());
        rc = std::max(rc, man.failure_code);
      }
    }
    return rc;
  } catch (const annb::ConfigError& e) {
    std::cerr << "annb: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "annb: " << e.what() << '\n';
    return kExitSolver;
  }
}
