#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "annb/basis.hpp"
#include "annb/errors.hpp"
#include "annb/geometry.hpp"
#include "annb/lsq.hpp"
#include "annb/pde.hpp"

namespace annb {

/// Relative discrete l2 error sqrt(sum |p - u|^2) / sqrt(sum |u|^2).
inline double err_l2(std::span<const double> predicted, std::span<const double> exact) {
  if (predicted.size() != exact.size() || predicted.empty())
    throw ConfigError("err_l2: inputs must have equal nonzero length");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double e = predicted[i] - exact[i];
    num += e * e;
    den += exact[i] * exact[i];
  }
  if (den == 0.0) throw UndefinedMetric("err_l2: exact field is identically zero");
  return std::sqrt(num) / std::sqrt(den);
}

struct AdaptiveConfig {
  std::string problem = "peak2d-case1";
  double epsilon = 1e-4;
  double radius = 0.15;
  int m0 = 200;
  int mstar = 1000;
  int scale_max = 10;
  double gamma = 2.0;
  Strategy strategy = Strategy::transferable;
  double range = 1.0;
  std::uint64_t seed = 1;
  int n_max = 50;
  double tol = 1e-5;
  int max_refinements = 16;
  int max_radius_halvings = 3;
  double cutoff = 1e-12;
  RowWeights weights{};
  bool warm_start = false;

  GridSpec base_grid = GridSpec::resolution(50);
  std::size_t boundary_count = 400;
  BallSampling ball{};
  /// Test grid points per axis for err_L2.
  int test_grid = 256;

  /// Settings of the published experiments for a benchmark.
  static AdaptiveConfig for_benchmark(const std::string& name) {
    AdaptiveConfig c;
    c.problem = name;
    if (name == "corner2d") {
      c.epsilon = 1e-3;
      c.m0 = 600;
      c.radius = 0.32;
    } else if (name == "peak3d") {
      c.m0 = 2000;
      c.radius = 0.11;
      c.base_grid = GridSpec::target_count(10000);
      c.boundary_count = 2400;
      c.ball = BallSampling::for_dim(3);
      c.test_grid = 50;
    }
    return c;
  }

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("config: epsilon must be positive");
    if (!(radius > 0.0)) throw ConfigError("config: radius must be positive");
    if (scale_max < 1) throw ConfigError("config: scale_max must be >= 1");
    if (m0 < 1 || mstar < 1) throw ConfigError("config: basis counts must be >= 1");
    if (!(gamma > 0.0) || !(range > 0.0)) throw ConfigError("config: gamma and R must be positive");
    if (n_max < 1 || !(tol > 0.0)) throw ConfigError("config: need n_max >= 1 and tol > 0");
    if (max_refinements < 0 || max_radius_halvings < 0)
      throw ConfigError("config: refinement caps must be non-negative");
    if (!(cutoff >= 0.0 && cutoff < 1.0)) throw ConfigError("config: cutoff must lie in [0, 1)");
    if (test_grid < 2) throw ConfigError("config: test grid needs >= 2 points per axis");
  }

  GaussNewtonOptions solver_options() const {
    GaussNewtonOptions o;
    o.n_max = n_max;
    o.tol = tol;
    o.cutoff = cutoff;
    o.weights = weights;
    return o;
  }
};

/// Unscaled neurons for subdomain `stream` (0 = base set) under the configured strategy.
inline BasisSet make_neurons(const AdaptiveConfig& cfg, Eigen::Index M, int d, std::uint64_t stream) {
  return cfg.strategy == Strategy::uniform ? generate_uniform(M, cfg.range, d, cfg.seed, stream)
                                           : generate_transferable(M, cfg.gamma, d, cfg.seed, stream);
}

inline std::vector<double> interior_residuals(const SemilinearProblem& problem,
                                              const BasisSet& basis, const Eigen::VectorXd& alpha,
                                              const PointList& pts) {
  std::vector<double> out;
  out.reserve(pts.size());
  EvalBundle b;
  for (const auto& x : pts) {
    basis.evaluate_into(x, b);
    out.push_back(apply_operator(problem, b, alpha) - problem.forcing(x));
  }
  return out;
}

/// Mean squared interior residual over X_f0.
inline double mean_residual(const SemilinearProblem& problem, const BasisSet& basis0,
                            const Eigen::VectorXd& alpha0, const PointList& interior0) {
  if (interior0.empty()) throw ConfigError("mean_residual: empty point set");
  double s = 0.0;
  for (double r : interior_residuals(problem, basis0, alpha0, interior0)) s += r * r;
  return s / static_cast<double>(interior0.size());
}

/// Index of the largest |residual|, first index on ties.
inline std::size_t argmax_abs(std::span<const double> residuals) {
  if (residuals.empty()) throw ConfigError("argmax: empty residual list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < residuals.size(); ++i)
    if (std::abs(residuals[i]) > std::abs(residuals[best])) best = i;
  return best;
}

/// Collocation point of X_f0 with the largest absolute interior residual.
inline Point locate_peak(const SemilinearProblem& problem, const BasisSet& basis0,
                         const Eigen::VectorXd& alpha0, const PointList& interior0) {
  const auto res = interior_residuals(problem, basis0, alpha0, interior0);
  return interior0[argmax_abs(res)];
}

/// Smallest s minimising losses[s - 1].
inline int argmin_scale(std::span<const double> losses) {
  if (losses.empty()) throw ConfigError("scale search: no candidate scales");
  std::size_t best = 0;
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (losses[i] < losses[best]) best = i;
  return static_cast<int>(best) + 1;
}

struct ScaleSearchResult {
  int scale = 1;
  BasisSet basis;
  SolveReport report;
  std::vector<double> losses;  // Loss_s for s = 1..L
};

/// For s = 1..L, fit ball k alone with the Omega_0 coefficients frozen and keep the scale
/// with the smallest local loss. `bases[k]` is replaced by each candidate in turn.
inline ScaleSearchResult scale_search(const SemilinearProblem& problem,
                                      const PartitionState& partition,
                                      const CollocationSets& points, std::vector<BasisSet> bases,
                                      const Coefficients& frozen, std::size_t k,
                                      const BasisSet& neurons, int L,
                                      const GaussNewtonOptions& opt) {
  if (L < 1) throw ConfigError("scale search: L must be >= 1");
  if (k < 1 || k >= bases.size() || frozen.size() != bases.size())
    throw ConfigError("scale search: ball index / state mismatch");
  const BallSubdomain& ball = partition.ball(k);
  const AssemblyScope scope = AssemblyScope::local(bases.size(), k);
  std::vector<double> losses;
  std::optional<ScaleSearchResult> best;
  for (int s = 1; s <= L; ++s) {
    bases[k] = rescale(neurons, ball.center, s);
    Coefficients state = frozen;
    state[k] = Eigen::VectorXd::Zero(bases[k].size());
    const Discretization disc{partition, bases, points};
    SolveReport rep;
    double loss = 0.0;
    try {
      rep = solve_coupled(problem, disc, scope, opt, state);
      if (!rep.converged)
        throw NonConvergence("local Gauss-Newton did not reach tol in n_max iterations");
      loss = evaluate_loss(problem, disc, scope, rep.alpha, opt.weights).loss;
    } catch (const NonConvergence& e) {
      throw NonConvergence("scale search s=" + std::to_string(s) + ": " + e.what(),
                           e.loss_history());
    } catch (const Error& e) {
      throw NumericError("scale search s=" + std::to_string(s) + ": " + e.what());
    }
    losses.push_back(loss);
    if (!best || loss < best->losses.back()) {
      best.emplace(ScaleSearchResult{s, bases[k], std::move(rep), {loss}});
    }
  }
  best->losses = std::move(losses);
  return std::move(*best);
}

/// Piecewise expansion u(x) = sum alpha_{m,k} psi_{m,k}(x) on the subdomain owning x.
struct PiecewiseSolution {
  PartitionState partition;
  std::vector<BasisSet> bases;
  Coefficients alpha;

  std::size_t owner_of(const Point& x) const {
    const auto k = partition.owner(x);
    if (!k) throw GeometryError("solution: point lies in no subdomain");
    return *k;
  }
  double operator()(const Point& x) const {
    const std::size_t k = owner_of(x);
    return bases[k].expand(alpha[k], x);
  }
};

struct RefinementRecord {
  std::size_t K = 0;
  Point center;
  double radius = 0.0;
  int scale = 0;
  std::vector<double> scale_losses;
  double mean_residual_before = 0.0;
  double mean_residual_after = 0.0;
  double loss = 0.0;
  int iterations = 0;
  std::optional<double> err_l2;
};

using AdaptiveTrace = std::vector<RefinementRecord>;

struct SolveState {
  PiecewiseSolution solution;
  CollocationSets points;
  SolveReport report;
  double initial_mean_residual = 0.0;
  double final_mean_residual = 0.0;
  std::optional<double> initial_err_l2;
  std::vector<std::pair<std::string, double>> timings;
};

struct AnnbResult {
  SolveState state;
  AdaptiveTrace trace;
};

/// Uniform test lattice over the outer box masked to the closed region.
inline PointList test_points(const BaseRegion& region, int per_axis) {
  return detail::lattice(region.outer(), per_axis,
                         [&](const Point& p) { return region.contains_closed(p); });
}

inline double err_l2(const PiecewiseSolution& u, const ScalarField& exact, const PointList& pts) {
  std::vector<double> pred, ex;
  pred.reserve(pts.size());
  ex.reserve(pts.size());
  for (const auto& x : pts) {
    pred.push_back(u(x));
    ex.push_back(exact(x));
  }
  return err_l2(pred, ex);
}

/// Called after each refinement with the record, the current solution and collocation sets.
using RefinementObserver =
    std::function<void(const RefinementRecord&, const PiecewiseSolution&, const CollocationSets&)>;

/// Adaptive loop: solve on Omega_0, then while the mean interior residual exceeds epsilon,
/// carve a ball at the residual peak, pick its scale, and re-solve the coupled system.
inline AnnbResult annb_solve(const SemilinearProblem& problem, const AdaptiveConfig& cfg,
                             const RefinementObserver& observer = {}) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t) {
    return std::chrono::duration<double>(clock::now() - t).count();
  };
  const int d = problem.dim();
  const GaussNewtonOptions opt = cfg.solver_options();

  PartitionState partition(problem.region);
  CollocationSets points = initial_collocation(problem.region, cfg.base_grid, cfg.boundary_count);
  std::vector<BasisSet> bases{normalize_to_region(make_neurons(cfg, cfg.m0, d, 0), problem.region)};
  std::optional<PointList> test;
  if (problem.exact) test = test_points(problem.region, cfg.test_grid);

  std::vector<std::pair<std::string, double>> timings;
  AdaptiveTrace trace;
  auto t0 = clock::now();
  auto coupled = [&](Coefficients initial) {
    const Discretization disc{partition, bases, points};
    SolveReport rep =
        solve_coupled(problem, disc, AssemblyScope::global(bases.size()), opt, std::move(initial));
    if (!rep.converged)
      throw NonConvergence("coupled Gauss-Newton did not reach tol in n_max iterations");
    return rep;
  };
  SolveReport report = coupled({});
  timings.emplace_back("base_solve", seconds_since(t0));
  double L0 = mean_residual(problem, bases[0], report.alpha[0], points.interior[0]);
  const double initial_mean = L0;
  std::optional<double> initial_err;
  if (test) initial_err = err_l2(PiecewiseSolution{partition, bases, report.alpha}, *problem.exact, *test);

  while (L0 > cfg.epsilon) {
    if (static_cast<int>(partition.K()) >= cfg.max_refinements)
      throw NonConvergence("annb: max_refinements (" + std::to_string(cfg.max_refinements) +
                           ") reached with mean residual " + std::to_string(L0));
    const auto t_ref = clock::now();
    RefinementRecord rec;
    rec.mean_residual_before = L0;
    rec.center = locate_peak(problem, bases[0], report.alpha[0], points.interior[0]);

    double r = cfg.radius;
    for (int attempt = 0;; ++attempt) {
      try {
        partition = split_subdomain(partition, rec.center, r);
        break;
      } catch (const RefinementConflict&) {
        if (attempt >= cfg.max_radius_halvings) throw;
        r *= 0.5;
      }
    }
    const std::size_t k = partition.K();
    rec.K = k;
    rec.radius = r;
    points = reclassify_collocation(std::move(points), partition, k, cfg.ball);

    const BasisSet neurons = make_neurons(cfg, cfg.mstar, d, k);
    bases.push_back(neurons);
    Coefficients frozen = report.alpha;
    frozen.push_back(Eigen::VectorXd::Zero(neurons.size()));
    ScaleSearchResult search =
        scale_search(problem, partition, points, bases, frozen, k, neurons, cfg.scale_max, opt);
    bases[k] = search.basis;
    rec.scale = search.scale;
    rec.scale_losses = search.losses;

    Coefficients initial;
    if (cfg.warm_start) {
      initial = report.alpha;
      initial.push_back(search.report.alpha[k]);
    }
    report = coupled(std::move(initial));
    L0 = mean_residual(problem, bases[0], report.alpha[0], points.interior[0]);
    rec.mean_residual_after = L0;
    rec.loss = report.loss;
    rec.iterations = report.iterations;
    const PiecewiseSolution current{partition, bases, report.alpha};
    if (test) rec.err_l2 = err_l2(current, *problem.exact, *test);
    timings.emplace_back("refinement_" + std::to_string(k), seconds_since(t_ref));
    trace.push_back(rec);
    if (observer) observer(rec, current, points);
  }

  PiecewiseSolution solution{std::move(partition), std::move(bases), report.alpha};
  return AnnbResult{SolveState{std::move(solution), std::move(points), std::move(report),
                               initial_mean, L0, initial_err, std::move(timings)},
                    std::move(trace)};
}

}  // namespace annb
