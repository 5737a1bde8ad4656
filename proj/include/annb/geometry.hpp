#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "annb/errors.hpp"

namespace annb {

/// Spatial point, d <= 3. Fixed capacity keeps points off the heap.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using PointList = std::vector<Point>;

/// Absolute tolerance for on-boundary and on-sphere tests.
inline constexpr double kGeoTol = 1e-10;
/// Interior collocation points closer than this to a re-entrant corner are dropped.
inline constexpr double kCornerExclusion = 1e-8;

inline Point make_point(std::initializer_list<double> xs) {
  Point p(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) p(i++) = x;
  return p;
}

struct Box {
  Point lo;
  Point hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Point& x, double tol = 0.0) const {
    for (int i = 0; i < dim(); ++i)
      if (x(i) < lo(i) - tol || x(i) > hi(i) + tol) return false;
    return true;
  }
};

/// Axis-aligned box, optionally with a closed sub-box removed.
class BaseRegion {
 public:
  enum class Kind { box, box_minus_box };

  static BaseRegion box(Point lo, Point hi) {
    BaseRegion r;
    r.outer_ = Box{std::move(lo), std::move(hi)};
    r.validate();
    return r;
  }

  static BaseRegion box_minus_box(Box outer, Box removed) {
    BaseRegion r;
    r.outer_ = std::move(outer);
    r.removed_ = std::move(removed);
    r.validate();
    return r;
  }

  static BaseRegion cube(int d, double lo = -1.0, double hi = 1.0) {
    return box(Point::Constant(d, lo), Point::Constant(d, hi));
  }

  /// [-1,1]^2 minus [0,1]^2.
  static BaseRegion l_shape() {
    return box_minus_box(Box{make_point({-1, -1}), make_point({1, 1})},
                         Box{make_point({0, 0}), make_point({1, 1})});
  }

  Kind kind() const { return removed_ ? Kind::box_minus_box : Kind::box; }
  int dim() const { return outer_.dim(); }
  const Box& outer() const { return outer_; }
  const std::optional<Box>& removed() const { return removed_; }

  Point center() const { return 0.5 * (outer_.lo + outer_.hi); }
  double circumradius() const { return 0.5 * (outer_.hi - outer_.lo).norm(); }

  /// Strictly inside the open region (farther than `tol` from the boundary).
  bool contains_open(const Point& x, double tol = kGeoTol) const {
    for (int i = 0; i < dim(); ++i)
      if (!(x(i) > outer_.lo(i) + tol && x(i) < outer_.hi(i) - tol)) return false;
    if (removed_ && removed_->contains(x, tol)) return false;
    return true;
  }

  /// Inside the closure of the region.
  bool contains_closed(const Point& x, double tol = kGeoTol) const {
    if (!outer_.contains(x, tol)) return false;
    if (!removed_) return true;
    // A removed-box face coincident with an outer face is not adjacent to the region, so
    // points on it are excluded as well; faces interior to the outer box are kept.
    for (int i = 0; i < dim(); ++i) {
      const bool lo_flush = std::abs(removed_->lo(i) - outer_.lo(i)) <= tol;
      const bool hi_flush = std::abs(removed_->hi(i) - outer_.hi(i)) <= tol;
      const bool past_lo = lo_flush ? x(i) >= removed_->lo(i) - tol : x(i) > removed_->lo(i) + tol;
      const bool before_hi =
          hi_flush ? x(i) <= removed_->hi(i) + tol : x(i) < removed_->hi(i) - tol;
      if (!(past_lo && before_hi)) return true;
    }
    return false;
  }

  bool on_boundary(const Point& x, double tol = kGeoTol) const {
    return contains_closed(x, tol) && !contains_open(x, tol);
  }

  /// Vertices of the removed box lying strictly inside the outer box.
  PointList reentrant_corners() const {
    PointList out;
    if (!removed_) return out;
    const int d = dim();
    for (int mask = 0; mask < (1 << d); ++mask) {
      Point v(d);
      for (int i = 0; i < d; ++i) v(i) = (mask >> i) & 1 ? removed_->hi(i) : removed_->lo(i);
      bool inside = true;
      for (int i = 0; i < d; ++i)
        inside = inside && v(i) > outer_.lo(i) + kGeoTol && v(i) < outer_.hi(i) - kGeoTol;
      if (inside) out.push_back(v);
    }
    return out;
  }

  bool near_reentrant_corner(const Point& x) const {
    for (const Point& c : reentrant_corners())
      if ((x - c).norm() < kCornerExclusion) return true;
    return false;
  }

 private:
  BaseRegion() = default;

  void validate() const {
    const int d = outer_.dim();
    if (d < 1 || d > 3 || outer_.hi.size() != d) throw ConfigError("region: dimension must be 1..3");
    for (int i = 0; i < d; ++i)
      if (!(outer_.lo(i) < outer_.hi(i))) throw ConfigError("region: require lo < hi on every axis");
    if (removed_) {
      if (removed_->dim() != d || removed_->hi.size() != d)
        throw ConfigError("region: removed box dimension mismatch");
      for (int i = 0; i < d; ++i) {
        if (!(removed_->lo(i) < removed_->hi(i)))
          throw ConfigError("region: removed box requires lo < hi");
        if (removed_->lo(i) < outer_.lo(i) || removed_->hi(i) > outer_.hi(i))
          throw ConfigError("region: removed box must lie inside the outer box");
      }
    }
  }

  Box outer_;
  std::optional<Box> removed_;
};

struct BallSubdomain {
  Point center;
  double radius = 0.0;
  std::size_t index = 0;

  double distance(const Point& x) const { return (x - center).norm(); }
  bool contains_closed(const Point& x, double tol = kGeoTol) const {
    return distance(x) <= radius + tol;
  }
  bool contains_open(const Point& x) const { return distance(x) < radius; }
};

/// Omega_0 = Omega minus the closed balls; Omega_k = B_k intersected with Omega.
/// Immutable value; splitting returns a new partition.
class PartitionState {
 public:
  explicit PartitionState(BaseRegion base) : base_(std::move(base)) {}

  const BaseRegion& base() const { return base_; }
  const std::vector<BallSubdomain>& balls() const { return balls_; }
  std::size_t K() const { return balls_.size(); }
  std::size_t num_subdomains() const { return balls_.size() + 1; }
  int dim() const { return base_.dim(); }

  const BallSubdomain& ball(std::size_t k) const {
    if (k < 1 || k > balls_.size()) throw ConfigError("partition: ball index out of range");
    return balls_[k - 1];
  }

  /// Strict membership in Omega_k.
  bool contains_interior(std::size_t k, const Point& x) const {
    if (k > balls_.size()) throw ConfigError("partition: subdomain index out of range");
    if (x.size() != dim()) throw ConfigError("partition: point dimension mismatch");
    if (!base_.contains_open(x)) return false;
    if (k == 0) {
      for (const auto& b : balls_)
        if (b.contains_closed(x)) return false;
      return true;
    }
    return balls_[k - 1].contains_open(x);
  }

  /// Subdomain owning a point of the closed region; points on a sphere go to the ball.
  std::optional<std::size_t> owner(const Point& x) const {
    if (!base_.contains_closed(x)) return std::nullopt;
    for (const auto& b : balls_)
      if (b.contains_closed(x)) return b.index;
    return 0;
  }

  /// Appends B_r(center) as Omega_{K+1}; throws RefinementConflict on overlap.
  PartitionState split(const Point& center, double r) const {
    if (!(r > 0.0)) throw ConfigError("split: radius must be positive");
    if (center.size() != dim()) throw ConfigError("split: center dimension mismatch");
    if (!base_.outer().contains(center, r)) throw GeometryError("split: ball misses the domain");
    for (const auto& b : balls_) {
      if (!((center - b.center).norm() > r + b.radius))
        throw RefinementConflict(b.index, "split: new ball intersects subdomain " +
                                              std::to_string(b.index));
    }
    PartitionState next = *this;
    next.balls_.push_back(BallSubdomain{center, r, balls_.size() + 1});
    return next;
  }

 private:
  BaseRegion base_;
  std::vector<BallSubdomain> balls_;
};

inline PartitionState split_subdomain(const PartitionState& partition, const Point& center,
                                      double r) {
  return partition.split(center, r);
}

/// Per-subdomain collocation sets. interface[0] is always empty.
struct CollocationSets {
  std::vector<PointList> interior;
  std::vector<PointList> boundary;
  std::vector<PointList> interface;

  std::size_t num_subdomains() const { return interior.size(); }
  std::size_t total_rows() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < interior.size(); ++k)
      n += interior[k].size() + boundary[k].size() + 2 * interface[k].size();
    return n;
  }
};

/// Either a per-axis resolution or a target count: the largest n with n^d <= target,
/// before masking.
struct GridSpec {
  int per_axis = 0;
  std::size_t target = 0;

  static GridSpec resolution(int n) { return GridSpec{n, 0}; }
  static GridSpec target_count(std::size_t n) { return GridSpec{0, n}; }
};

namespace detail {

inline double lin(double lo, double hi, int i, int n) {
  return i == n - 1 ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

/// Tensor grid over `box` with n points per axis, endpoints included, last axis fastest.
template <class Keep>
PointList lattice(const Box& box, int n, Keep&& keep) {
  const int d = box.dim();
  PointList out;
  std::vector<int> idx(d, 0);
  Point p(d);
  for (;;) {
    for (int i = 0; i < d; ++i) p(i) = lin(box.lo(i), box.hi(i), idx[i], n);
    if (keep(p)) out.push_back(p);
    int axis = d - 1;
    while (axis >= 0 && ++idx[axis] == n) idx[axis--] = 0;
    if (axis < 0) break;
  }
  return out;
}

template <class Keep>
PointList lattice_for(const Box& box, const GridSpec& spec, Keep&& keep) {
  if (spec.per_axis > 0) {
    if (spec.per_axis < 2) throw ConfigError("grid: resolution must be >= 2 per axis");
    return lattice(box, spec.per_axis, keep);
  }
  if (spec.target == 0) throw ConfigError("grid: empty specification");
  int n = 1;
  while (std::pow(static_cast<double>(n + 1), box.dim()) <= static_cast<double>(spec.target)) ++n;
  if (n < 2) throw ConfigError("grid: target count too small for a 2-point lattice");
  return lattice(box, n, keep);
}

/// n cell-centred points on the segment a -> b.
inline void segment_points(const Point& a, const Point& b, std::size_t n, PointList& out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    out.push_back(a + t * (b - a));
  }
}

struct Segment {
  Point a, b;
  double length() const { return (b - a).norm(); }
};

/// Boundary of a 2D box-minus-box as axis-aligned segments.
inline std::vector<Segment> boundary_segments_2d(const BaseRegion& region) {
  const Box& o = region.outer();
  std::vector<Segment> segs;
  auto pt = [](double x, double y) { return make_point({x, y}); };
  // Outer edges: (axis fixed, value); subtract the part covered by a flush removed face.
  for (int axis = 0; axis < 2; ++axis) {
    const int other = 1 - axis;
    for (int side = 0; side < 2; ++side) {
      const double v = side ? o.hi(axis) : o.lo(axis);
      std::vector<std::pair<double, double>> spans{{o.lo(other), o.hi(other)}};
      if (const auto& r = region.removed()) {
        const double rv = side ? r->hi(axis) : r->lo(axis);
        if (std::abs(rv - v) <= kGeoTol) {
          spans.clear();
          if (r->lo(other) > o.lo(other) + kGeoTol) spans.push_back({o.lo(other), r->lo(other)});
          if (r->hi(other) < o.hi(other) - kGeoTol) spans.push_back({r->hi(other), o.hi(other)});
        }
      }
      for (auto [s0, s1] : spans) {
        segs.push_back(axis == 0 ? Segment{pt(v, s0), pt(v, s1)} : Segment{pt(s0, v), pt(s1, v)});
      }
    }
  }
  if (const auto& r = region.removed()) {
    for (int axis = 0; axis < 2; ++axis) {
      const int other = 1 - axis;
      for (int side = 0; side < 2; ++side) {
        const double v = side ? r->hi(axis) : r->lo(axis);
        const double ov = side ? o.hi(axis) : o.lo(axis);
        if (std::abs(v - ov) <= kGeoTol) continue;
        const double s0 = r->lo(other), s1 = r->hi(other);
        segs.push_back(axis == 0 ? Segment{pt(v, s0), pt(v, s1)} : Segment{pt(s0, v), pt(s1, v)});
      }
    }
  }
  return segs;
}

}  // namespace detail

/// Uniform tensor grid over the outer box, masked to the closed region.
inline PointList generate_interior_grid(const BaseRegion& region, const GridSpec& spec) {
  return detail::lattice_for(region.outer(), spec, [&](const Point& p) {
    return region.contains_closed(p) && !region.near_reentrant_corner(p);
  });
}

/// Equal cell-centred lattices on each box face. For a 2D box-minus-box the count is
/// split over the boundary edges in proportion to their length.
inline PointList generate_boundary_points(const BaseRegion& region, std::size_t count) {
  const int d = region.dim();
  PointList out;
  out.reserve(count);
  if (region.kind() == BaseRegion::Kind::box) {
    const std::size_t faces = 2 * static_cast<std::size_t>(d);
    if (count == 0 || count % faces != 0)
      throw ConfigError("boundary: count must be a positive multiple of the face count");
    const std::size_t per_face = count / faces;
    const Box& o = region.outer();
    if (d == 1) {
      out.push_back(make_point({o.lo(0)}));
      out.push_back(make_point({o.hi(0)}));
      return out;
    }
    std::size_t n = per_face;
    if (d == 3) {
      n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(per_face))));
      if (n * n != per_face) throw ConfigError("boundary: per-face count must be a square in 3D");
    }
    for (int axis = 0; axis < d; ++axis) {
      for (int side = 0; side < 2; ++side) {
        const double v = side ? o.hi(axis) : o.lo(axis);
        if (d == 2) {
          const int other = 1 - axis;
          Point a(2), b(2);
          a(axis) = b(axis) = v;
          a(other) = o.lo(other);
          b(other) = o.hi(other);
          detail::segment_points(a, b, n, out);
        } else {
          const int u = (axis + 1) % 3, w = (axis + 2) % 3;
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              Point p(3);
              p(axis) = v;
              p(u) = o.lo(u) + (o.hi(u) - o.lo(u)) * (static_cast<double>(i) + 0.5) /
                                   static_cast<double>(n);
              p(w) = o.lo(w) + (o.hi(w) - o.lo(w)) * (static_cast<double>(j) + 0.5) /
                                   static_cast<double>(n);
              out.push_back(p);
            }
          }
        }
      }
    }
    return out;
  }
  if (d != 2) throw ConfigError("boundary: box-minus-box sampling is implemented for 2D only");
  const auto segs = detail::boundary_segments_2d(region);
  double total = 0.0;
  for (const auto& s : segs) total += s.length();
  for (const auto& s : segs) {
    const double share = static_cast<double>(count) * s.length() / total;
    const auto n = static_cast<std::size_t>(std::llround(share));
    if (std::abs(share - static_cast<double>(n)) > 1e-9 || n == 0)
      throw ConfigError("boundary: count does not split evenly over the boundary edges");
    detail::segment_points(s.a, s.b, n, out);
  }
  return out;
}

/// Points on the sphere |x - center| = r: equispaced angles in 2D, a Fibonacci lattice in 3D.
inline PointList sample_sphere_uniform(const Point& center, double r, std::size_t count, int d) {
  if (count < 1 || !(r > 0.0)) throw ConfigError("sphere: need count >= 1 and r > 0");
  if (center.size() != d || (d != 2 && d != 3))
    throw ConfigError("sphere: dimension must be 2 or 3 and match the center");
  PointList out;
  out.reserve(count);
  const double n = static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    Point dir(d);
    if (d == 2) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(i) / n;
      dir << std::cos(theta), std::sin(theta);
    } else {
      const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
      const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / n;
      const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden_angle * static_cast<double>(i);
      dir << rho * std::cos(phi), rho * std::sin(phi), z;
    }
    dir /= dir.norm();
    out.push_back(center + r * dir);
  }
  return out;
}

/// Point counts used when a new ball is carved out.
struct BallSampling {
  GridSpec interior = GridSpec::resolution(40);
  std::size_t interface_count = 200;

  static BallSampling for_dim(int d) {
    if (d == 3) return BallSampling{GridSpec::target_count(8500), 600};
    return BallSampling{};
  }
};

/// Initial sets for K = 0.
inline CollocationSets initial_collocation(const BaseRegion& region, const GridSpec& interior,
                                           std::size_t boundary_count) {
  CollocationSets sets;
  sets.interior.push_back(generate_interior_grid(region, interior));
  sets.boundary.push_back(generate_boundary_points(region, boundary_count));
  sets.interface.emplace_back();
  return sets;
}

/// Moves base points captured by ball `k` and builds its interior and interface sets.
/// Reapplying with the same ball is a no-op.
inline CollocationSets reclassify_collocation(CollocationSets sets,
                                              const PartitionState& partition, std::size_t k,
                                              const BallSampling& sampling) {
  const BallSubdomain& ball = partition.ball(k);
  const BaseRegion& region = partition.base();
  const int d = partition.dim();
  if (sets.num_subdomains() < k + 1) {
    sets.interior.resize(k + 1);
    sets.boundary.resize(k + 1);
    sets.interface.resize(k + 1);
  }

  PointList kept_boundary;
  for (auto& p : sets.boundary[0]) {
    if (ball.contains_closed(p))
      sets.boundary[k].push_back(p);
    else
      kept_boundary.push_back(p);
  }
  sets.boundary[0] = std::move(kept_boundary);

  std::erase_if(sets.interior[0], [&](const Point& p) { return ball.contains_closed(p); });

  Box bbox{ball.center - Point::Constant(d, ball.radius),
           ball.center + Point::Constant(d, ball.radius)};
  sets.interior[k] = detail::lattice_for(bbox, sampling.interior, [&](const Point& p) {
    return partition.contains_interior(k, p) && !region.near_reentrant_corner(p);
  });
  if (sets.interior[k].empty()) throw GeometryError("reclassify: ball has no interior points");

  sets.interface[k] = sample_sphere_uniform(ball.center, ball.radius, sampling.interface_count, d);
  std::erase_if(sets.interface[k], [&](const Point& p) { return !region.contains_open(p); });
  return sets;
}

/// Unit outward normal of ball k at an interface point.
inline Point outward_normal(const BallSubdomain& ball, const Point& x) {
  const Point v = x - ball.center;
  const double n = v.norm();
  if (n == 0.0) throw DegeneratePoint("normal: point coincides with the ball center");
  if (std::abs(n - ball.radius) > kGeoTol * std::max(1.0, ball.radius))
    throw GeometryError("normal: point is not on the ball surface");
  return v / n;
}

/// One point per row, 17 significant digits, header x0,x1,...
inline void write_points_csv(const std::string& path, const PointList& pts) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path);
  const int d = pts.empty() ? 0 : static_cast<int>(pts.front().size());
  for (int i = 0; i < d; ++i) os << (i ? ",x" : "x") << i;
  os << '\n';
  char buf[32];
  for (const auto& p : pts) {
    for (int i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", p(i));
      os << (i ? "," : "") << buf;
    }
    os << '\n';
  }
}

}  // namespace annb
