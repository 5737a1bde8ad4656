#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "annb/basis.hpp"
#include "annb/errors.hpp"
#include "annb/geometry.hpp"

namespace annb {

using ScalarField = std::function<double(const Point&)>;

/// N(u) and N'(u) of the operator -Lap u + N(u). A default-constructed value is N = 0.
struct Nonlinearity {
  std::function<double(double)> value;
  std::function<double(double)> derivative;

  bool is_zero() const { return !value; }
  double operator()(double u) const { return value ? value(u) : 0.0; }
  double prime(double u) const { return derivative ? derivative(u) : 0.0; }

  static Nonlinearity none() { return {}; }
  static Nonlinearity square() {
    return {[](double u) { return u * u; }, [](double u) { return 2.0 * u; }};
  }
};

struct SemilinearProblem {
  std::string name;
  BaseRegion region;
  Nonlinearity nonlinearity;
  ScalarField forcing;
  ScalarField boundary;
  std::optional<ScalarField> exact;

  bool is_linear() const { return nonlinearity.is_zero(); }
  int dim() const { return region.dim(); }
};

/// -sum alpha_m Lap psi_m(x) + N(sum alpha_m psi_m(x)).
inline double apply_operator(const SemilinearProblem& problem, const EvalBundle& bundle,
                             const Eigen::VectorXd& alpha) {
  if (alpha.size() != bundle.values.size()) throw ConfigError("operator: coefficient size mismatch");
  const double u = bundle.values.dot(alpha);
  return -bundle.laplacians.dot(alpha) + problem.nonlinearity(u);
}

/// Row of D L(u_n; psi_m) = -Lap psi_m + N'(u_n) psi_m.
inline Eigen::VectorXd linearized_row(const SemilinearProblem& problem, const EvalBundle& bundle,
                                      double u_n) {
  if (problem.is_linear()) return -bundle.laplacians;
  return -bundle.laplacians + problem.nonlinearity.prime(u_n) * bundle.values;
}

/// Sharpness a of the Gaussian peaks exp(-a |x - x_p|^2).
inline constexpr double kPeakSharpness = 1000.0;
/// Corner forcing is evaluated only where x^2 + y^2 is at least this.
inline constexpr double kCornerForcingGuard = 1e-16;

inline const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names{
      "peak2d-case1",       "peak2d-case2",       "peak2d-case3", "nonlinear2d-case1",
      "nonlinear2d-case2",  "nonlinear2d-case3",  "corner2d",     "peak3d"};
  return names;
}

namespace detail {

/// Sum of Gaussian peaks with analytic Laplacian: Lap u_p = u_p (4 a^2 r^2 - 2 a d).
struct PeakSum {
  std::vector<Point> centers;
  double a = kPeakSharpness;

  double value(const Point& x) const {
    double s = 0.0;
    for (const auto& c : centers) s += std::exp(-a * (x - c).squaredNorm());
    return s;
  }
  double laplacian(const Point& x) const {
    const double d = static_cast<double>(x.size());
    double s = 0.0;
    for (const auto& c : centers) {
      const double r2 = (x - c).squaredNorm();
      s += std::exp(-a * r2) * (4.0 * a * a * r2 - 2.0 * a * d);
    }
    return s;
  }
};

inline std::vector<Point> peak_centers_2d(int which) {
  switch (which) {
    case 1: return {make_point({0.5, 0.5})};
    case 2: return {make_point({0.5, 0.5}), make_point({-0.5, -0.5})};
    default:
      return {make_point({0.5, 0.5}), make_point({-0.5, 0.5}), make_point({-0.5, -0.5}),
              make_point({0.5, -0.5})};
  }
}

inline SemilinearProblem peak_problem(std::string name, BaseRegion region, PeakSum peaks,
                                      bool nonlinear) {
  SemilinearProblem p{std::move(name), std::move(region), {}, {}, {}, {}};
  auto u = [peaks](const Point& x) { return peaks.value(x); };
  if (nonlinear) {
    p.nonlinearity = Nonlinearity::square();
    p.forcing = [peaks](const Point& x) {
      const double v = peaks.value(x);
      return -peaks.laplacian(x) + v * v;
    };
  } else {
    p.forcing = [peaks](const Point& x) { return -peaks.laplacian(x); };
  }
  p.boundary = u;
  p.exact = u;
  return p;
}

}  // namespace detail

/// The benchmark problems with exact solutions and analytically derived forcing.
inline SemilinearProblem benchmark(std::string_view name) {
  using detail::PeakSum;
  for (int c = 1; c <= 3; ++c) {
    const std::string suffix = "case" + std::to_string(c);
    if (name == "peak2d-" + suffix)
      return detail::peak_problem(std::string(name), BaseRegion::cube(2),
                                  PeakSum{detail::peak_centers_2d(c)}, false);
    if (name == "nonlinear2d-" + suffix)
      return detail::peak_problem(std::string(name), BaseRegion::cube(2),
                                  PeakSum{detail::peak_centers_2d(c)}, true);
  }
  if (name == "peak3d")
    return detail::peak_problem("peak3d", BaseRegion::cube(3),
                                PeakSum{{make_point({0.5, 0.5, 0.5})}}, false);
  if (name == "corner2d") {
    SemilinearProblem p{"corner2d", BaseRegion::l_shape(), {}, {}, {}, {}};
    auto u = [](const Point& x) { return std::cbrt(x.squaredNorm()); };
    p.forcing = [](const Point& x) {
      const double rho2 = x.squaredNorm();
      if (rho2 < kCornerForcingGuard) throw NumericError("corner2d: forcing evaluated at the corner");
      return -(4.0 / 9.0) * std::pow(rho2, -2.0 / 3.0);
    };
    p.boundary = u;
    p.exact = u;
    return p;
  }
  throw ConfigError("unknown benchmark '" + std::string(name) + "'");
}

}  // namespace annb
