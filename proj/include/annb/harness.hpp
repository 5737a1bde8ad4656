#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "annb/adaptive.hpp"
#include "annb/basis.hpp"
#include "annb/errors.hpp"
#include "annb/geometry.hpp"
#include "annb/lsq.hpp"
#include "annb/pde.hpp"

namespace annb {

using nlohmann::json;

// ---------------------------------------------------------------------------------------
// Configuration <-> flat JSON

inline json config_to_json(const AdaptiveConfig& c) {
  return json{{"problem", c.problem},
              {"epsilon", c.epsilon},
              {"radius", c.radius},
              {"m0", c.m0},
              {"mstar", c.mstar},
              {"scale_max", c.scale_max},
              {"gamma", c.gamma},
              {"strategy", to_string(c.strategy)},
              {"R", c.range},
              {"seed", c.seed},
              {"n_max", c.n_max},
              {"tol", c.tol},
              {"max_refinements", c.max_refinements},
              {"max_radius_halvings", c.max_radius_halvings},
              {"cutoff", c.cutoff},
              {"weights", {c.weights.interior, c.weights.boundary, c.weights.interface_value,
                           c.weights.interface_normal}},
              {"warm_start", c.warm_start},
              {"base_grid_resolution", c.base_grid.per_axis},
              {"base_grid_target", c.base_grid.target},
              {"boundary_count", c.boundary_count},
              {"ball_grid_resolution", c.ball.interior.per_axis},
              {"ball_grid_target", c.ball.interior.target},
              {"interface_count", c.ball.interface_count},
              {"test_grid", c.test_grid}};
}

/// Fields absent from `j` keep the benchmark defaults of j["problem"] (or of `base`).
inline AdaptiveConfig config_from_json(const json& j, std::optional<AdaptiveConfig> base = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  AdaptiveConfig c = base ? *base
                          : AdaptiveConfig::for_benchmark(j.value("problem", std::string("peak2d-case1")));
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("problem", c.problem);
    get("epsilon", c.epsilon);
    get("radius", c.radius);
    get("m0", c.m0);
    get("mstar", c.mstar);
    get("scale_max", c.scale_max);
    get("gamma", c.gamma);
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    get("R", c.range);
    get("seed", c.seed);
    get("n_max", c.n_max);
    get("tol", c.tol);
    get("max_refinements", c.max_refinements);
    get("max_radius_halvings", c.max_radius_halvings);
    get("cutoff", c.cutoff);
    if (j.contains("weights")) {
      const auto w = j.at("weights").get<std::vector<double>>();
      if (w.size() != 4) throw ConfigError("config: weights needs 4 entries");
      c.weights = RowWeights{w[0], w[1], w[2], w[3]};
    }
    get("warm_start", c.warm_start);
    get("base_grid_resolution", c.base_grid.per_axis);
    get("base_grid_target", c.base_grid.target);
    get("boundary_count", c.boundary_count);
    get("ball_grid_resolution", c.ball.interior.per_axis);
    get("ball_grid_target", c.ball.interior.target);
    get("interface_count", c.ball.interface_count);
    get("test_grid", c.test_grid);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------------------
// Test grid

struct TestGrid {
  PointList points;
  std::vector<std::size_t> owner;
  std::vector<double> predicted;
  std::vector<double> exact;
  std::vector<double> abs_error;

  std::size_t size() const { return points.size(); }
};

/// Evaluates the piecewise solution on a uniform lattice masked to the region. Points on a
/// sphere are assigned to the ball.
inline TestGrid evaluate_on_grid(const PiecewiseSolution& u, const SemilinearProblem& problem,
                                 int per_axis) {
  if (!problem.exact) throw ConfigError("evaluate_on_grid: problem has no exact solution");
  TestGrid g;
  g.points = test_points(problem.region, per_axis);
  const auto n = g.points.size();
  g.owner.reserve(n);
  g.predicted.reserve(n);
  g.exact.reserve(n);
  g.abs_error.reserve(n);
  for (const auto& x : g.points) {
    const std::size_t k = u.owner_of(x);
    const double p = u.bases[k].expand(u.alpha[k], x);
    const double e = (*problem.exact)(x);
    g.owner.push_back(k);
    g.predicted.push_back(p);
    g.exact.push_back(e);
    g.abs_error.push_back(std::abs(p - e));
  }
  return g;
}

inline double err_l2(const TestGrid& g) { return err_l2(g.predicted, g.exact); }

// ---------------------------------------------------------------------------------------
// Artifact writers

namespace detail {

inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json point_json(const Point& p) { return std::vector<double>(p.data(), p.data() + p.size()); }

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write " + p.string());
  return os;
}

}  // namespace detail

inline void write_solution_csv(const std::filesystem::path& path, const TestGrid& g) {
  auto os = detail::open_out(path);
  const int d = g.points.empty() ? 0 : static_cast<int>(g.points.front().size());
  for (int i = 0; i < d; ++i) os << 'x' << i << ',';
  os << "u_pred,u_exact,abs_err\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (int a = 0; a < d; ++a) os << detail::fmt17(g.points[i](a)) << ',';
    os << detail::fmt17(g.predicted[i]) << ',' << detail::fmt17(g.exact[i]) << ','
       << detail::fmt17(g.abs_error[i]) << '\n';
  }
}

/// Reads the u_pred and u_exact columns back from a solution CSV.
inline std::pair<std::vector<double>, std::vector<double>> read_solution_csv(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<double> pred, ex;
  while (std::getline(is, line)) {
    std::vector<double> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(std::strtod(cell.c_str(), nullptr));
    if (cols.size() < 3) throw ConfigError("malformed solution row");
    pred.push_back(cols[cols.size() - 3]);
    ex.push_back(cols[cols.size() - 2]);
  }
  return {pred, ex};
}

inline json to_json(const RefinementRecord& r) {
  json j{{"K", r.K},
         {"center", detail::point_json(r.center)},
         {"radius", r.radius},
         {"scale", r.scale},
         {"scale_losses", r.scale_losses},
         {"mean_residual_before", r.mean_residual_before},
         {"mean_residual_after", r.mean_residual_after},
         {"loss", r.loss},
         {"iterations", r.iterations}};
  j["err_l2"] = r.err_l2 ? json(*r.err_l2) : json(nullptr);
  return j;
}

inline json subdomains_json(const PiecewiseSolution& u) {
  json arr = json::array();
  for (const auto& b : u.partition.balls())
    arr.push_back({{"index", b.index},
                   {"center", detail::point_json(b.center)},
                   {"radius", b.radius},
                   {"scale", u.bases[b.index].scale()}});
  return arr;
}

// ---------------------------------------------------------------------------------------
// Runs

struct RunManifest {
  std::string status = "failed";
  std::string error;
  AdaptiveConfig config;
  AdaptiveTrace trace;
  std::optional<double> err_l2;
  std::optional<double> initial_err_l2;
  double initial_mean_residual = 0.0;
  double final_mean_residual = 0.0;
  std::size_t K = 0;
  std::vector<std::pair<std::string, double>> timings;
  std::vector<std::pair<std::string, std::string>> artifacts;
  /// Exit code class of a failure: 2 solver, 3 configuration.
  int failure_code = 0;

  json to_json() const {
    json j{{"status", status},
           {"benchmark", config.problem},
           {"seed", config.seed},
           {"config", config_to_json(config)},
           {"K", K},
           {"initial_mean_residual", initial_mean_residual},
           {"final_mean_residual", final_mean_residual}};
    if (!error.empty()) j["error"] = error;
    j["err_l2"] = err_l2 ? json(*err_l2) : json(nullptr);
    j["initial_err_l2"] = initial_err_l2 ? json(*initial_err_l2) : json(nullptr);
    json tr = json::array();
    for (const auto& r : trace) tr.push_back(annb::to_json(r));
    j["trace"] = tr;
    json tm = json::object();
    for (const auto& [k, v] : timings) tm[k] = v;
    j["timings_s"] = tm;
    json ar = json::object();
    for (const auto& [k, v] : artifacts) ar[k] = v;
    j["artifacts"] = ar;
    return j;
  }
};

struct RunOptions {
  bool dump_system = false;
  bool dump_points = false;
  /// Writes errors.csv next to the other artifacts (disabled for sweep members).
  bool write_errors = true;
};

inline void write_errors_csv(const std::filesystem::path& path,
                             const std::vector<std::pair<int, double>>& rows) {
  auto os = detail::open_out(path);
  os << "mstar,err_l2\n";
  for (const auto& [m, e] : rows) os << m << ',' << detail::fmt17(e) << '\n';
}

/// Runs the adaptive solver for `config.problem` and writes manifest.json, trace.jsonl,
/// solution.csv, subdomains.json, bases.json and errors.csv into `out_dir`. Solver failures
/// are recorded in the manifest rather than thrown.
inline RunManifest run(const AdaptiveConfig& config, const std::filesystem::path& out_dir,
                       const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  RunManifest man;
  man.config = config;
  const auto t0 = std::chrono::steady_clock::now();
  auto artifact = [&](const std::string& key, const std::string& file) {
    man.artifacts.emplace_back(key, file);
    return out_dir / file;
  };
  auto trace_path = artifact("trace", "trace.jsonl");
  auto trace_os = detail::open_out(trace_path);
  try {
    const SemilinearProblem problem = benchmark(config.problem);
    AnnbResult res = annb_solve(problem, config, [&](const RefinementRecord& r, auto&&, auto&&) {
      man.trace.push_back(r);
      trace_os << annb::to_json(r).dump() << '\n';
      trace_os.flush();
    });
    man.status = "converged";
    man.K = res.state.solution.partition.K();
    man.initial_mean_residual = res.state.initial_mean_residual;
    man.final_mean_residual = res.state.final_mean_residual;
    man.initial_err_l2 = res.state.initial_err_l2;
    man.timings = res.state.timings;

    const auto te = std::chrono::steady_clock::now();
    const TestGrid grid = evaluate_on_grid(res.state.solution, problem, config.test_grid);
    man.err_l2 = err_l2(grid);
    write_solution_csv(artifact("solution", "solution.csv"), grid);
    {
      auto os = detail::open_out(artifact("subdomains", "subdomains.json"));
      os << subdomains_json(res.state.solution).dump(2) << '\n';
    }
    {
      json bj = json::array();
      for (const auto& b : res.state.solution.bases) bj.push_back(annb::to_json(b));
      auto os = detail::open_out(artifact("bases", "bases.json"));
      os << bj.dump() << '\n';
    }
    if (opts.write_errors)
      write_errors_csv(artifact("errors", "errors.csv"), {{config.mstar, *man.err_l2}});
    if (opts.dump_points) {
      const auto& P = res.state.points;
      for (std::size_t k = 0; k < P.num_subdomains(); ++k) {
        const std::string s = std::to_string(k);
        write_points_csv(artifact("interior_" + s, "points_interior_" + s + ".csv"), P.interior[k]);
        write_points_csv(artifact("boundary_" + s, "points_boundary_" + s + ".csv"), P.boundary[k]);
        if (k > 0)
          write_points_csv(artifact("interface_" + s, "points_interface_" + s + ".csv"),
                           P.interface[k]);
      }
    }
    if (opts.dump_system) {
      const auto& u = res.state.solution;
      const Discretization disc{u.partition, u.bases, res.state.points};
      const SystemBlocks sys = assemble_linearized(
          problem, disc, AssemblyScope::global(u.bases.size()), u.alpha, config.weights);
      write_matrix_bin(artifact("F", "F.bin"), sys.F);
      write_matrix_bin(artifact("T", "T.bin"), sys.T);
    }
    man.timings.emplace_back(
        "evaluation", std::chrono::duration<double>(std::chrono::steady_clock::now() - te).count());
  } catch (const ConfigError& e) {
    man.status = "failed";
    man.error = e.what();
    man.failure_code = 3;
  } catch (const Error& e) {
    man.status = "failed";
    man.error = e.what();
    man.failure_code = 2;
  }
  man.timings.emplace_back(
      "total", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  auto os = detail::open_out(out_dir / "manifest.json");
  os << man.to_json().dump(2) << '\n';
  return man;
}

/// One run per M* under out_dir/mstar_<M>, plus out_dir/errors.csv over the converged runs.
inline std::vector<RunManifest> run_sweep(const AdaptiveConfig& config,
                                          const std::vector<int>& mstars,
                                          const std::filesystem::path& out_dir,
                                          RunOptions opts = {}) {
  std::filesystem::create_directories(out_dir);
  opts.write_errors = false;
  std::vector<RunManifest> out;
  std::vector<std::pair<int, double>> rows;
  json index = json::array();
  for (int m : mstars) {
    AdaptiveConfig c = config;
    c.mstar = m;
    const std::string sub = "mstar_" + std::to_string(m);
    out.push_back(run(c, out_dir / sub, opts));
    if (out.back().err_l2) rows.emplace_back(m, *out.back().err_l2);
    index.push_back({{"mstar", m}, {"dir", sub}, {"status", out.back().status}});
  }
  write_errors_csv(out_dir / "errors.csv", rows);
  auto os = detail::open_out(out_dir / "sweep.json");
  os << index.dump(2) << '\n';
  return out;
}

}  // namespace annb
