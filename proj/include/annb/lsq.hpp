#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "annb/basis.hpp"
#include "annb/errors.hpp"
#include "annb/geometry.hpp"
#include "annb/pde.hpp"

namespace annb {

/// One coefficient vector per subdomain.
using Coefficients = std::vector<Eigen::VectorXd>;

enum class RowKind : int { interior = 0, boundary = 1, interface_value = 2, interface_normal = 3 };

inline const char* to_string(RowKind k) {
  switch (k) {
    case RowKind::interior: return "interior";
    case RowKind::boundary: return "boundary";
    case RowKind::interface_value: return "interface_value";
    default: return "interface_normal";
  }
}

/// Multipliers applied to each residual row (the loss sees their squares).
struct RowWeights {
  double interior = 1.0;
  double boundary = 1.0;
  double interface_value = 1.0;
  double interface_normal = 1.0;

  double of(RowKind k) const {
    switch (k) {
      case RowKind::interior: return interior;
      case RowKind::boundary: return boundary;
      case RowKind::interface_value: return interface_value;
      default: return interface_normal;
    }
  }
};

struct RowInfo {
  RowKind kind;
  std::size_t subdomain;
  std::size_t point;
};

struct ColumnInfo {
  std::size_t subdomain;
  Eigen::Index basis_index;
};

/// Partition, per-subdomain bases and collocation sets that belong together.
struct Discretization {
  const PartitionState& partition;
  std::span<const BasisSet> bases;
  const CollocationSets& points;

  std::size_t num_subdomains() const { return partition.num_subdomains(); }

  void validate() const {
    const std::size_t n = num_subdomains();
    if (bases.size() != n || points.num_subdomains() != n || points.boundary.size() != n ||
        points.interface.size() != n)
      throw ConfigError("discretization: bases/collocation not aligned with the partition");
  }
};

/// Which rows enter the system and which coefficient blocks are unknowns. Inactive blocks
/// stay at their current values and act through the right-hand side.
struct AssemblyScope {
  std::vector<std::size_t> row_subdomains;
  std::vector<bool> active;

  static AssemblyScope global(std::size_t n) {
    AssemblyScope s;
    for (std::size_t k = 0; k < n; ++k) s.row_subdomains.push_back(k);
    s.active.assign(n, true);
    return s;
  }

  /// Rows of ball k only, with every other block frozen.
  static AssemblyScope local(std::size_t n, std::size_t k) {
    AssemblyScope s;
    s.row_subdomains = {k};
    s.active.assign(n, false);
    s.active[k] = true;
    return s;
  }
};

struct SystemBlocks {
  Eigen::MatrixXd F;
  Eigen::VectorXd T;
  std::vector<RowInfo> rows;
  std::vector<ColumnInfo> columns;
  /// Column offset of each subdomain block, or -1 when inactive.
  std::vector<Eigen::Index> block_offset;
  std::vector<Eigen::Index> block_size;
};

inline Coefficients zero_coefficients(std::span<const BasisSet> bases) {
  Coefficients c;
  for (const auto& b : bases) c.push_back(Eigen::VectorXd::Zero(b.size()));
  return c;
}

/// Linearised system at `state`: interior rows D L(u_k; psi) = f - L u_k, boundary rows
/// psi = g - u_k, interface rows (psi_k - psi_0) and (d_n psi_k - d_n psi_0) equal to minus
/// the current jumps. With N = 0 and a zero state this is the linear system itself.
inline SystemBlocks assemble_linearized(const SemilinearProblem& problem,
                                        const Discretization& disc, const AssemblyScope& scope,
                                        const Coefficients& state,
                                        const RowWeights& weights = {}) {
  disc.validate();
  const std::size_t n = disc.num_subdomains();
  if (state.size() != n || scope.active.size() != n)
    throw ConfigError("assemble: state/scope size mismatch");
  for (std::size_t k = 0; k < n; ++k)
    if (state[k].size() != disc.bases[k].size())
      throw ConfigError("assemble: coefficient block size mismatch");

  SystemBlocks sys;
  sys.block_offset.assign(n, -1);
  sys.block_size.assign(n, 0);
  Eigen::Index cols = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!scope.active[k]) continue;
    sys.block_offset[k] = cols;
    sys.block_size[k] = disc.bases[k].size();
    for (Eigen::Index m = 0; m < disc.bases[k].size(); ++m) sys.columns.push_back({k, m});
    cols += disc.bases[k].size();
  }

  for (std::size_t k : scope.row_subdomains) {
    if (k >= n || !scope.active[k]) throw ConfigError("assemble: row subdomain must be active");
    const auto& P = disc.points;
    if (P.interior[k].empty() && (k == 0 || P.interface[k].empty()))
      throw ConfigError("assemble: empty collocation set for subdomain " + std::to_string(k));
    for (std::size_t i = 0; i < P.interior[k].size(); ++i)
      sys.rows.push_back({RowKind::interior, k, i});
    for (std::size_t i = 0; i < P.boundary[k].size(); ++i)
      sys.rows.push_back({RowKind::boundary, k, i});
  }
  for (std::size_t k : scope.row_subdomains) {
    if (k == 0) continue;
    for (std::size_t i = 0; i < disc.points.interface[k].size(); ++i) {
      sys.rows.push_back({RowKind::interface_value, k, i});
      sys.rows.push_back({RowKind::interface_normal, k, i});
    }
  }

  const auto rows = static_cast<Eigen::Index>(sys.rows.size());
  sys.F.setZero(rows, cols);
  sys.T.setZero(rows);

  EvalBundle bk, b0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const RowInfo& info = sys.rows[static_cast<std::size_t>(r)];
    const std::size_t k = info.subdomain;
    const BasisSet& basis = disc.bases[k];
    const Eigen::Index off = sys.block_offset[k];
    const Eigen::Index mk = basis.size();
    const double w = weights.of(info.kind);
    switch (info.kind) {
      case RowKind::interior: {
        const Point& x = disc.points.interior[k][info.point];
        basis.evaluate_into(x, bk);
        const double u = bk.values.dot(state[k]);
        const double Lu = -bk.laplacians.dot(state[k]) + problem.nonlinearity(u);
        sys.F.block(r, off, 1, mk) = w * linearized_row(problem, bk, u).transpose();
        sys.T(r) = w * (problem.forcing(x) - Lu);
        break;
      }
      case RowKind::boundary: {
        const Point& x = disc.points.boundary[k][info.point];
        basis.evaluate_into(x, bk);
        sys.F.block(r, off, 1, mk) = w * bk.values.transpose();
        sys.T(r) = w * (problem.boundary(x) - bk.values.dot(state[k]));
        break;
      }
      case RowKind::interface_value:
      case RowKind::interface_normal: {
        const Point& x = disc.points.interface[k][info.point];
        basis.evaluate_into(x, bk);
        disc.bases[0].evaluate_into(x, b0);
        const bool normal = info.kind == RowKind::interface_normal;
        Eigen::VectorXd rk, r0;
        if (normal) {
          const Point nrm = outward_normal(disc.partition.ball(k), x);
          rk = bk.directional(nrm);
          r0 = b0.directional(nrm);
        } else {
          rk = bk.values;
          r0 = b0.values;
        }
        sys.F.block(r, off, 1, mk) = w * rk.transpose();
        if (sys.block_offset[0] >= 0)
          sys.F.block(r, sys.block_offset[0], 1, r0.size()) = -w * r0.transpose();
        sys.T(r) = w * (r0.dot(state[0]) - rk.dot(state[k]));
        break;
      }
    }
  }
  return sys;
}

/// Linear system F alpha = T of the coupled problem (requires N = 0).
inline SystemBlocks assemble_linear(const SemilinearProblem& problem, const Discretization& disc,
                                    const RowWeights& weights = {}) {
  if (!problem.is_linear()) throw ConfigError("assemble_linear: problem is nonlinear");
  return assemble_linearized(problem, disc, AssemblyScope::global(disc.num_subdomains()),
                             zero_coefficients(disc.bases), weights);
}

struct GaussNewtonStep {
  int n = 0;
  double loss = 0.0;     // |F^n a^n - T^n|^2
  double re_mse = std::numeric_limits<double>::quiet_NaN();
  double state_loss = 0.0;  // |T^n|^2, the loss at alpha^n
};

struct SolveReport {
  Coefficients alpha;
  Eigen::VectorXd solution;  // stacked active blocks of the last linear solve
  double loss = 0.0;
  Eigen::Index rank = 0;
  std::array<double, 4> loss_by_kind{};
  std::vector<GaussNewtonStep> trace;
  int iterations = 0;
  bool converged = true;
};

/// Per-kind and total residual of the full nonlinear loss restricted to `scope`'s rows.
inline SolveReport evaluate_loss(const SemilinearProblem& problem, const Discretization& disc,
                                 const AssemblyScope& scope, const Coefficients& state,
                                 const RowWeights& weights = {}) {
  const SystemBlocks sys = assemble_linearized(problem, disc, scope, state, weights);
  SolveReport rep;
  rep.alpha = state;
  for (std::size_t r = 0; r < sys.rows.size(); ++r) {
    const double t = sys.T(static_cast<Eigen::Index>(r));
    rep.loss_by_kind[static_cast<int>(sys.rows[r].kind)] += t * t;
  }
  rep.loss = sys.T.squaredNorm();
  return rep;
}

/// Minimum-norm least squares via SVD (LAPACK gelsd); singular values below
/// cutoff * sigma_max are discarded.
inline SolveReport solve_min_norm(const SystemBlocks& sys, double cutoff = 1e-12) {
  const Eigen::Index m = sys.F.rows(), n = sys.F.cols();
  if (m == 0 || n == 0) throw ConfigError("solve_min_norm: empty system");
  if (sys.T.size() != m) throw ConfigError("solve_min_norm: right-hand side size mismatch");
  if (!sys.F.allFinite() || !sys.T.allFinite())
    throw NumericError("solve_min_norm: non-finite matrix entries");

  Eigen::MatrixXd A = sys.F;
  const Eigen::Index ldb = std::max(m, n);
  Eigen::VectorXd B = Eigen::VectorXd::Zero(ldb);
  B.head(m) = sys.T;
  Eigen::VectorXd sv(std::min(m, n));
  lapack_int rank = 0;
  const lapack_int info = LAPACKE_dgelsd(LAPACK_COL_MAJOR, static_cast<lapack_int>(m),
                                         static_cast<lapack_int>(n), 1, A.data(),
                                         static_cast<lapack_int>(m), B.data(),
                                         static_cast<lapack_int>(ldb), sv.data(), cutoff, &rank);
  if (info != 0) throw NumericError("solve_min_norm: gelsd failed, info=" + std::to_string(info));

  SolveReport rep;
  rep.solution = B.head(n);
  rep.rank = rank;
  const Eigen::VectorXd resid = sys.F * rep.solution - sys.T;
  rep.loss = resid.squaredNorm();
  for (std::size_t r = 0; r < sys.rows.size(); ++r) {
    const double e = resid(static_cast<Eigen::Index>(r));
    rep.loss_by_kind[static_cast<int>(sys.rows[r].kind)] += e * e;
  }
  rep.iterations = 1;
  return rep;
}

/// Adds the stacked increment of `sys`'s active blocks to `state`.
inline void apply_increment(const SystemBlocks& sys, const Eigen::VectorXd& inc, Coefficients& state) {
  for (std::size_t k = 0; k < state.size(); ++k)
    if (sys.block_offset[k] >= 0) state[k] += inc.segment(sys.block_offset[k], sys.block_size[k]);
}

struct GaussNewtonOptions {
  int n_max = 50;
  double tol = 1e-5;
  double cutoff = 1e-12;
  RowWeights weights{};
  double divergence_factor = 1e6;
  // Losses below loss_floor * |T^0|^2 are roundoff; Re_mse is noise there, so stop.
  double loss_floor = 1e-24;
};

/// Plain Gauss-Newton: solve the linearised system for an increment, add it, stop when the
/// relative change of the linearised loss drops below tol or after n_max + 1 solves.
inline SolveReport gauss_newton(const SemilinearProblem& problem, const Discretization& disc,
                                const AssemblyScope& scope, const GaussNewtonOptions& opt,
                                Coefficients state) {
  if (opt.n_max < 1) throw ConfigError("gauss_newton: n_max must be >= 1");
  SolveReport rep;
  rep.converged = false;
  double prev_loss = 0.0, first_loss = 0.0, first_state = 0.0;
  for (int n = 0; n <= opt.n_max; ++n) {
    const SystemBlocks sys = assemble_linearized(problem, disc, scope, state, opt.weights);
    GaussNewtonStep step;
    step.n = n;
    step.state_loss = sys.T.squaredNorm();
    if (n == 0) first_state = step.state_loss;
    if (n >= 1 && prev_loss == 0.0) {
      // Nothing left to reduce.
      rep.converged = true;
      rep.trace.push_back(step);
      break;
    }
    SolveReport inc = solve_min_norm(sys, opt.cutoff);
    step.loss = inc.loss;
    rep.rank = inc.rank;
    rep.loss_by_kind = inc.loss_by_kind;
    if (n == 0) first_loss = std::max(inc.loss, std::numeric_limits<double>::min());
    if (!std::isfinite(inc.loss) || inc.loss > opt.divergence_factor * first_loss) {
      rep.trace.push_back(step);
      std::vector<double> history;
      for (const auto& s : rep.trace) history.push_back(s.loss);
      throw NonConvergence("gauss_newton: diverged at iteration " + std::to_string(n) +
                               " (loss " + std::to_string(inc.loss) + ")",
                           std::move(history));
    }
    if (n >= 1) {
      step.re_mse = std::abs(inc.loss - prev_loss) / prev_loss;
      if (step.re_mse < opt.tol || inc.loss <= opt.loss_floor * first_state) {
        rep.converged = true;
        rep.trace.push_back(step);
        rep.loss = inc.loss;
        break;
      }
    }
    apply_increment(sys, inc.solution, state);
    rep.solution = inc.solution;
    rep.trace.push_back(step);
    rep.loss = inc.loss;
    prev_loss = inc.loss;
  }
  rep.iterations = static_cast<int>(rep.trace.size());
  rep.alpha = std::move(state);
  return rep;
}

/// Direct solve for linear problems, Gauss-Newton otherwise. `initial` defaults to zero.
inline SolveReport solve_coupled(const SemilinearProblem& problem, const Discretization& disc,
                                 const AssemblyScope& scope, const GaussNewtonOptions& opt,
                                 Coefficients initial = {}) {
  if (initial.empty()) initial = zero_coefficients(disc.bases);
  if (!problem.is_linear()) return gauss_newton(problem, disc, scope, opt, std::move(initial));
  const SystemBlocks sys = assemble_linearized(problem, disc, scope, initial, opt.weights);
  SolveReport rep = solve_min_norm(sys, opt.cutoff);
  apply_increment(sys, rep.solution, initial);
  rep.alpha = std::move(initial);
  rep.trace.push_back(GaussNewtonStep{0, rep.loss, std::numeric_limits<double>::quiet_NaN(),
                                      sys.T.squaredNorm()});
  return rep;
}

namespace detail {

inline void put_le(std::ofstream& os, const void* p, std::size_t n) {
  const auto* bytes = static_cast<const char*>(p);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(bytes, static_cast<std::streamsize>(n));
  } else {
    for (std::size_t i = n; i-- > 0;) os.put(bytes[i]);
  }
}

}  // namespace detail

/// Binary dump: uint32 rows, uint32 cols (little endian), then row-major float64 entries.
inline void write_matrix_bin(const std::string& path, const Eigen::MatrixXd& M) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path);
  const auto rows = static_cast<std::uint32_t>(M.rows()), cols = static_cast<std::uint32_t>(M.cols());
  detail::put_le(os, &rows, 4);
  detail::put_le(os, &cols, 4);
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      const double v = M(i, j);
      detail::put_le(os, &v, 8);
    }
}

inline Eigen::MatrixXd read_matrix_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  unsigned char hdr[8];
  is.read(reinterpret_cast<char*>(hdr), 8);
  auto u32 = [&](int o) {
    return static_cast<std::uint32_t>(hdr[o]) | static_cast<std::uint32_t>(hdr[o + 1]) << 8 |
           static_cast<std::uint32_t>(hdr[o + 2]) << 16 | static_cast<std::uint32_t>(hdr[o + 3]) << 24;
  };
  Eigen::MatrixXd M(u32(0), u32(4));
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      unsigned char b[8];
      is.read(reinterpret_cast<char*>(b), 8);
      std::uint64_t bits = 0;
      for (int t = 7; t >= 0; --t) bits = bits << 8 | b[t];
      double v;
      std::memcpy(&v, &bits, 8);
      M(i, j) = v;
    }
  if (!is) throw ConfigError("truncated matrix file " + path);
  return M;
}

inline void dump_system(const SystemBlocks& sys, const std::string& prefix) {
  write_matrix_bin(prefix + "F.bin", sys.F);
  write_matrix_bin(prefix + "T.bin", sys.T);
}

}  // namespace annb
