#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "annb/geometry.hpp"
#include "annb/rng.hpp"

using namespace annb;

namespace {

BaseRegion square() { return BaseRegion::cube(2); }

bool same_points(const PointList& a, const PointList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Reference subdomain count for a point, by brute force over every k.
int membership_count(const PartitionState& p, const Point& x) {
  int n = 0;
  for (std::size_t k = 0; k < p.num_subdomains(); ++k) n += p.contains_interior(k, x);
  return n;
}

}  // namespace

TEST(ContainsInterior, SpecExamples) {
  PartitionState p(square());
  EXPECT_TRUE(p.contains_interior(0, make_point({0, 0})));
  p = p.split(make_point({0.5, 0.5}), 0.15);
  EXPECT_FALSE(p.contains_interior(0, make_point({0.5, 0.5})));
  EXPECT_TRUE(p.contains_interior(1, make_point({0.5, 0.5})));

  PartitionState l(BaseRegion::l_shape());
  EXPECT_FALSE(l.contains_interior(0, make_point({0.5, 0.5})));
  EXPECT_TRUE(l.contains_interior(0, make_point({-0.5, 0.5})));
}

TEST(ContainsInterior, IndexOutOfRange) {
  PartitionState p(square());
  EXPECT_THROW(p.contains_interior(1, make_point({0, 0})), ConfigError);
  EXPECT_THROW(p.contains_interior(0, make_point({0, 0, 0})), ConfigError);
}

TEST(ContainsInterior, SphereAndBoundaryAreInNoOpenSubdomain) {
  PartitionState p = PartitionState(square()).split(make_point({0.5, 0.5}), 0.25);
  EXPECT_EQ(membership_count(p, make_point({0.75, 0.5})), 0);
  EXPECT_EQ(membership_count(p, make_point({1.0, 0.0})), 0);
  EXPECT_EQ(p.owner(make_point({0.75, 0.5})), std::optional<std::size_t>(1));
  EXPECT_EQ(p.owner(make_point({2.0, 0.0})), std::nullopt);
}

TEST(InteriorGrid, BenchmarkCounts) {
  EXPECT_EQ(generate_interior_grid(square(), GridSpec::resolution(50)).size(), 2500u);
  EXPECT_EQ(generate_interior_grid(BaseRegion::l_shape(), GridSpec::resolution(50)).size(), 1875u);
}

TEST(InteriorGrid, TwoByTwoGivesCorners) {
  const auto pts = generate_interior_grid(square(), GridSpec::resolution(2));
  ASSERT_EQ(pts.size(), 4u);
  for (const auto& p : pts) {
    EXPECT_EQ(std::abs(p(0)), 1.0);
    EXPECT_EQ(std::abs(p(1)), 1.0);
  }
}

TEST(InteriorGrid, TargetCountUsesLargestLattice) {
  // 21^3 = 9261 <= 10000 < 22^3.
  EXPECT_EQ(generate_interior_grid(BaseRegion::cube(3), GridSpec::target_count(10000)).size(), 9261u);
  EXPECT_THROW(generate_interior_grid(square(), GridSpec::resolution(1)), ConfigError);
  EXPECT_THROW(generate_interior_grid(square(), GridSpec::target_count(3)), ConfigError);
}

TEST(InteriorGrid, LShapeAvoidsRemovedQuadrantAndCorner) {
  const auto region = BaseRegion::l_shape();
  for (const auto& p : generate_interior_grid(region, GridSpec::resolution(51))) {
    EXPECT_FALSE(p(0) > kGeoTol && p(1) > kGeoTol);
    EXPECT_GE(p.norm(), kCornerExclusion);
  }
}

TEST(BoundaryPoints, SquareCounts) {
  const auto pts = generate_boundary_points(square(), 400);
  ASSERT_EQ(pts.size(), 400u);
  int left = 0;
  for (const auto& p : pts) {
    EXPECT_TRUE(square().on_boundary(p));
    left += std::abs(p(0) + 1.0) < kGeoTol;
  }
  EXPECT_EQ(left, 100);
}

TEST(BoundaryPoints, FourGivesEdgeMidpoints) {
  const auto pts = generate_boundary_points(square(), 4);
  ASSERT_EQ(pts.size(), 4u);
  for (const auto& p : pts) {
    EXPECT_DOUBLE_EQ(std::abs(p(0)) + std::abs(p(1)), 1.0);
    EXPECT_TRUE(p(0) == 0.0 || p(1) == 0.0);
  }
}

TEST(BoundaryPoints, CubeFaces) {
  const auto cube = BaseRegion::cube(3);
  const auto pts = generate_boundary_points(cube, 2400);
  ASSERT_EQ(pts.size(), 2400u);
  int top = 0;
  for (const auto& p : pts) {
    EXPECT_TRUE(cube.on_boundary(p));
    top += std::abs(p(2) - 1.0) < kGeoTol;
  }
  EXPECT_EQ(top, 400);
}

TEST(BoundaryPoints, Divisibility) {
  EXPECT_THROW(generate_boundary_points(square(), 402), ConfigError);
  EXPECT_THROW(generate_boundary_points(BaseRegion::cube(3), 6 * 3), ConfigError);
}

TEST(BoundaryPoints, LShapeSplitsByEdgeLength) {
  const auto region = BaseRegion::l_shape();
  const auto pts = generate_boundary_points(region, 400);
  ASSERT_EQ(pts.size(), 400u);
  int reentrant = 0;
  for (const auto& p : pts) {
    EXPECT_TRUE(region.on_boundary(p)) << p.transpose();
    reentrant += (std::abs(p(0)) < kGeoTol && p(1) > 0) || (std::abs(p(1)) < kGeoTol && p(0) > 0);
  }
  // Total length 8; each re-entrant edge has length 1.
  EXPECT_EQ(reentrant, 100);
}

TEST(Sphere, FourPointsOnCircle) {
  const auto pts = sample_sphere_uniform(make_point({0, 0}), 1.0, 4, 2);
  const PointList want{make_point({1, 0}), make_point({0, 1}), make_point({-1, 0}), make_point({0, -1})};
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_LT((pts[i] - want[i]).norm(), 1e-15);
}

TEST(Sphere, MembershipAndSpread) {
  const Point c = make_point({0.5, -0.2, 0.1});
  const double r = 0.11;
  const auto pts = sample_sphere_uniform(c, r, 600, 3);
  ASSERT_EQ(pts.size(), 600u);
  Point mean = Point::Zero(3);
  double dmin = 1e300;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_NEAR((pts[i] - c).norm(), r, 1e-12 * r);
    mean += pts[i];
    for (std::size_t j = 0; j < i; ++j) dmin = std::min(dmin, (pts[i] - pts[j]).norm());
  }
  mean /= 600.0;
  EXPECT_LT((mean - c).norm(), 0.05 * r);
  EXPECT_GT(dmin, 0.0);
}

TEST(Sphere, Preconditions) {
  EXPECT_THROW(sample_sphere_uniform(make_point({0, 0}), 1.0, 0, 2), ConfigError);
  EXPECT_THROW(sample_sphere_uniform(make_point({0, 0}), 0.0, 4, 2), ConfigError);
  EXPECT_THROW(sample_sphere_uniform(make_point({0, 0}), 1.0, 4, 3), ConfigError);
}

TEST(Split, ReferenceCenters) {
  PartitionState p(square());
  p = split_subdomain(p, make_point({0.5102, 0.5102}), 0.15);
  EXPECT_EQ(p.K(), 1u);
  p = split_subdomain(p, make_point({-0.5102, 0.5102}), 0.15);
  EXPECT_EQ(p.K(), 2u);
  EXPECT_EQ(p.ball(2).index, 2u);
}

TEST(Split, ConflictCarriesIndex) {
  PartitionState p = PartitionState(square()).split(make_point({0.5, 0.5}), 0.3);
  try {
    p.split(make_point({0.55, 0.5}), 0.05);
    FAIL() << "expected RefinementConflict";
  } catch (const RefinementConflict& e) {
    EXPECT_EQ(e.offending_index(), 1u);
  }
  // Tangent balls count as intersecting (closed test).
  EXPECT_THROW(p.split(make_point({0.5, -0.1}), 0.3), RefinementConflict);
  EXPECT_NO_THROW(p.split(make_point({0.5, -0.1 - 1e-9}), 0.3));
}

TEST(Split, PartitionIsImmutable) {
  const PartitionState p(square());
  const auto q = p.split(make_point({0, 0}), 0.2);
  EXPECT_EQ(p.K(), 0u);
  EXPECT_EQ(q.K(), 1u);
}

TEST(Reclassify, InteriorBall) {
  PartitionState p(square());
  auto sets = initial_collocation(p.base(), GridSpec::resolution(50), 400);
  p = p.split(make_point({0.5102, 0.5102}), 0.15);
  const auto before = sets.interior[0];
  sets = reclassify_collocation(std::move(sets), p, 1, BallSampling{});
  EXPECT_TRUE(sets.boundary[1].empty());
  EXPECT_EQ(sets.interface[1].size(), 200u);
  EXPECT_EQ(sets.boundary[0].size(), 400u);

  const auto captured = std::count_if(before.begin(), before.end(),
                                      [&](const Point& x) { return p.ball(1).contains_closed(x); });
  EXPECT_GT(captured, 0);
  EXPECT_EQ(sets.interior[0].size() + static_cast<std::size_t>(captured), before.size());
  for (const auto& x : sets.interior[1]) EXPECT_TRUE(p.contains_interior(1, x));
  for (const auto& x : sets.interior[0]) EXPECT_FALSE(p.ball(1).contains_closed(x));
}

TEST(Reclassify, ClippedBallFigureOne) {
  PartitionState p(square());
  auto sets = initial_collocation(p.base(), GridSpec::resolution(50), 400);
  p = p.split(make_point({-0.5102, 0.5102}), 0.15);
  sets = reclassify_collocation(std::move(sets), p, 1, BallSampling{});
  p = p.split(make_point({0.95, 0.2}), 0.1);
  sets = reclassify_collocation(std::move(sets), p, 2, BallSampling{});

  EXPECT_GT(sets.boundary[2].size(), 0u);
  EXPECT_EQ(sets.boundary[0].size() + sets.boundary[1].size() + sets.boundary[2].size(), 400u);
  EXPECT_LT(sets.interface[2].size(), 200u);
  EXPECT_GT(sets.interface[2].size(), 100u);
  for (const auto& x : sets.interface[2]) {
    EXPECT_NEAR((x - p.ball(2).center).norm(), 0.1, 1e-12 * 0.1);
    EXPECT_TRUE(p.base().contains_open(x));
  }
  for (const auto& x : sets.boundary[2]) EXPECT_TRUE(p.base().on_boundary(x));
}

TEST(Reclassify, Idempotent) {
  PartitionState p(square());
  auto sets = initial_collocation(p.base(), GridSpec::resolution(50), 400);
  p = p.split(make_point({0.95, 0.2}), 0.1);
  const auto once = reclassify_collocation(sets, p, 1, BallSampling{});
  const auto twice = reclassify_collocation(once, p, 1, BallSampling{});
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_TRUE(same_points(once.interior[k], twice.interior[k]));
    EXPECT_TRUE(same_points(once.boundary[k], twice.boundary[k]));
    EXPECT_TRUE(same_points(once.interface[k], twice.interface[k]));
  }
}

TEST(Reclassify, BallOutsideDomain) {
  PartitionState p(square());
  auto sets = initial_collocation(p.base(), GridSpec::resolution(10), 40);
  EXPECT_THROW(p.split(make_point({3.0, 3.0}), 0.1), GeometryError);
}

// Random partitions: every interior point in exactly one subdomain, boundary points
// conserved, interface points on the sphere and inside Omega.
TEST(Reclassify, RandomizedInvariants) {
  CounterRng rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    PartitionState p(square());
    auto sets = initial_collocation(p.base(), GridSpec::resolution(30), 200);
    for (int b = 0; b < 3; ++b) {
      const Point c = make_point({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      const double r = rng.uniform(0.05, 0.3);
      try {
        p = p.split(c, r);
      } catch (const RefinementConflict&) {
        continue;
      }
      sets = reclassify_collocation(std::move(sets), p, p.K(), BallSampling{GridSpec::resolution(12), 40});
    }
    std::size_t nb = 0;
    for (std::size_t k = 0; k < p.num_subdomains(); ++k) {
      nb += sets.boundary[k].size();
      for (const auto& x : sets.interior[k]) {
        if (k == 0 && p.base().on_boundary(x)) continue;  // base grid carries its edge points
        EXPECT_EQ(membership_count(p, x), 1);
        EXPECT_TRUE(p.contains_interior(k, x));
      }
      for (const auto& x : sets.boundary[k]) EXPECT_TRUE(p.base().on_boundary(x));
      if (k == 0) continue;
      for (const auto& x : sets.interface[k]) {
        EXPECT_NEAR((x - p.ball(k).center).norm(), p.ball(k).radius, 1e-12 * p.ball(k).radius);
        EXPECT_TRUE(p.base().contains_open(x));
      }
    }
    EXPECT_EQ(nb, 200u);
  }
}

TEST(Collocation, Deterministic) {
  PartitionState p(square());
  p = p.split(make_point({0.3, -0.2}), 0.2);
  auto a = reclassify_collocation(initial_collocation(p.base(), GridSpec::resolution(50), 400), p, 1, {});
  auto b = reclassify_collocation(initial_collocation(p.base(), GridSpec::resolution(50), 400), p, 1, {});
  EXPECT_TRUE(same_points(a.interior[1], b.interior[1]));
  EXPECT_TRUE(same_points(a.interface[1], b.interface[1]));
}

TEST(OutwardNormal, Examples) {
  const BallSubdomain unit{make_point({0, 0}), 1.0, 1};
  EXPECT_LT((outward_normal(unit, make_point({1, 0})) - make_point({1, 0})).norm(), 1e-15);
  const BallSubdomain b{make_point({0.5, 0.5}), 0.15, 1};
  EXPECT_LT((outward_normal(b, make_point({0.65, 0.5})) - make_point({1, 0})).norm(), 1e-12);
  EXPECT_THROW(outward_normal(b, make_point({0.5, 0.5})), DegeneratePoint);
  EXPECT_THROW(outward_normal(b, make_point({0.7, 0.5})), GeometryError);
  for (const auto& x : sample_sphere_uniform(b.center, b.radius, 200, 2)) {
    const Point n = outward_normal(b, x);
    EXPECT_NEAR(n.norm(), 1.0, 1e-14);
    EXPECT_NEAR(n.dot(x - b.center), b.radius, 1e-12);
  }
}

TEST(PointsCsv, RoundTripsAtFullPrecision) {
  const auto path = std::filesystem::temp_directory_path() / "annb_points_test.csv";
  const PointList pts{make_point({0.1, 1.0 / 3.0}), make_point({-1e-17, 2.0})};
  write_points_csv(path.string(), pts);
  std::ifstream is(path);
  std::string header, line;
  std::getline(is, header);
  EXPECT_EQ(header, "x0,x1");
  for (const auto& p : pts) {
    std::getline(is, line);
    const auto comma = line.find(',');
    EXPECT_EQ(std::stod(line.substr(0, comma)), p(0));
    EXPECT_EQ(std::stod(line.substr(comma + 1)), p(1));
  }
  std::filesystem::remove(path);
}
