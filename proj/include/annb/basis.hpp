#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "annb/errors.hpp"
#include "annb/geometry.hpp"
#include "annb/rng.hpp"

namespace annb {

enum class Strategy { uniform, transferable };

inline std::string to_string(Strategy s) { return s == Strategy::uniform ? "uniform" : "transferable"; }
inline Strategy strategy_from_string(const std::string& s) {
  if (s == "uniform") return Strategy::uniform;
  if (s == "transferable") return Strategy::transferable;
  throw ConfigError("unknown strategy '" + s + "'");
}

struct Neuron {
  Point w;
  double b = 0.0;
};

/// Basis values, gradients and Laplacians at one point. Row 0 is the constant function.
struct EvalBundle {
  Eigen::VectorXd values;
  Eigen::MatrixXd gradients;  // (M+1) x d
  Eigen::VectorXd laplacians;

  /// Normal derivatives along unit vector n.
  Eigen::VectorXd directional(const Point& n) const { return gradients * n; }
};

/// How a basis set was produced; carried into run manifests.
struct GenerationInfo {
  Strategy strategy = Strategy::transferable;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  double gamma = 0.0;  // transferable
  double range = 0.0;  // uniform
};

/// Random tanh features psi_m(x) = tanh(c * w_m^T (x - x_c) + b_m) plus psi_0 = 1.
/// Immutable after construction.
class BasisSet {
 public:
  BasisSet(Eigen::MatrixXd weights, Eigen::VectorXd biases, Point center, double scale,
           GenerationInfo info = {})
      : weights_(std::move(weights)),
        biases_(std::move(biases)),
        center_(std::move(center)),
        scale_(scale),
        info_(info) {
    if (weights_.rows() != biases_.size()) throw ConfigError("basis: weight/bias count mismatch");
    if (center_.size() != weights_.cols()) throw ConfigError("basis: center dimension mismatch");
    if (!(scale_ > 0.0)) throw ConfigError("basis: scale must be positive");
    if (!weights_.allFinite() || !biases_.allFinite()) throw ConfigError("basis: non-finite neuron");
    weight_norms2_ = weights_.rowwise().squaredNorm();
  }

  /// M + 1, counting the constant.
  Eigen::Index size() const { return weights_.rows() + 1; }
  Eigen::Index num_neurons() const { return weights_.rows(); }
  int dim() const { return static_cast<int>(weights_.cols()); }
  const Point& center() const { return center_; }
  double scale() const { return scale_; }
  const GenerationInfo& info() const { return info_; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& biases() const { return biases_; }

  Neuron neuron(Eigen::Index m) const {
    if (m < 1 || m > num_neurons()) throw ConfigError("basis: neuron index out of range");
    return Neuron{weights_.row(m - 1).transpose(), biases_(m - 1)};
  }

  /// Same neurons with a new affine input map.
  BasisSet with_affine(const Point& center, double scale) const {
    return BasisSet(weights_, biases_, center, scale, info_);
  }

  EvalBundle evaluate(const Point& x) const {
    EvalBundle out;
    evaluate_into(x, out);
    return out;
  }

  void evaluate_into(const Point& x, EvalBundle& out) const {
    const int d = dim();
    if (x.size() != d) throw ConfigError("basis: point dimension mismatch");
    if (!x.allFinite()) throw NumericError("basis: non-finite evaluation point");
    const Eigen::Index M = num_neurons();
    out.values.resize(M + 1);
    out.gradients.resize(M + 1, d);
    out.laplacians.resize(M + 1);
    out.values(0) = 1.0;
    out.gradients.row(0).setZero();
    out.laplacians(0) = 0.0;
    const Point shifted = x - center_;
    for (Eigen::Index m = 0; m < M; ++m) {
      double z = biases_(m);
      for (int i = 0; i < d; ++i) z += scale_ * weights_(m, i) * shifted(i);
      const double t = std::tanh(z);
      const double dt = 1.0 - t * t;
      out.values(m + 1) = t;
      for (int i = 0; i < d; ++i) out.gradients(m + 1, i) = scale_ * dt * weights_(m, i);
      out.laplacians(m + 1) = scale_ * scale_ * weight_norms2_(m) * (-2.0 * t * dt);
    }
  }

  /// Batched values: one row per point. Calls the pointwise kernel, so entries match
  /// `evaluate` bit for bit.
  Eigen::MatrixXd values(const PointList& pts) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(pts.size()), size());
    EvalBundle b;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      evaluate_into(pts[i], b);
      out.row(static_cast<Eigen::Index>(i)) = b.values.transpose();
    }
    return out;
  }

  double expand(const Eigen::VectorXd& alpha, const Point& x) const {
    if (alpha.size() != size()) throw ConfigError("basis: coefficient size mismatch");
    const EvalBundle b = evaluate(x);
    return b.values.dot(alpha);
  }

 private:
  Eigen::MatrixXd weights_;
  Eigen::VectorXd biases_;
  Point center_;
  double scale_;
  GenerationInfo info_;
  Eigen::VectorXd weight_norms2_;
};

/// w_m ~ U([-R,R]^d), b_m ~ U([-R,R]).
inline BasisSet generate_uniform(Eigen::Index M, double R, int d, std::uint64_t seed,
                                 std::uint64_t stream = 0) {
  if (M < 1 || !(R > 0.0) || d < 1 || d > 3) throw ConfigError("uniform basis: need M >= 1, R > 0");
  CounterRng rng(seed, stream);
  Eigen::MatrixXd W(M, d);
  Eigen::VectorXd b(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    for (int i = 0; i < d; ++i) W(m, i) = rng.uniform(-R, R);
    b(m) = rng.uniform(-R, R);
  }
  return BasisSet(std::move(W), std::move(b), Point::Zero(d), 1.0,
                  GenerationInfo{Strategy::uniform, seed, stream, 0.0, R});
}

/// Transferable construction: a_m = X_m / |X_m| with X_m standard Gaussian, r_m ~ U[0,1],
/// w_m = gamma * a_m, b_m = gamma * r_m. Every |w_m| equals gamma.
inline BasisSet generate_transferable(Eigen::Index M, double gamma, int d, std::uint64_t seed,
                                      std::uint64_t stream = 0) {
  if (M < 1 || !(gamma > 0.0) || d < 1 || d > 3)
    throw ConfigError("transferable basis: need M >= 1, gamma > 0");
  CounterRng rng(seed, stream);
  Eigen::MatrixXd W(M, d);
  Eigen::VectorXd b(M);
  Point X(d);
  for (Eigen::Index m = 0; m < M; ++m) {
    double norm = 0.0;
    do {
      for (int i = 0; i < d; ++i) X(i) = rng.normal();
      norm = X.norm();
    } while (norm < 1e-300);
    W.row(m) = (gamma / norm) * X.transpose();
    b(m) = gamma * rng.uniform01();
  }
  return BasisSet(std::move(W), std::move(b), Point::Zero(d), 1.0,
                  GenerationInfo{Strategy::transferable, seed, stream, gamma, 0.0});
}

/// Recentred, integer-scaled copy: psi_m(x) = tanh(c * w_m^T (x - x_K) + b_m).
inline BasisSet rescale(const BasisSet& base, const Point& center, int scale) {
  if (scale < 1) throw ConfigError("rescale: scale must be a positive integer");
  return base.with_affine(center, static_cast<double>(scale));
}

/// Affine map taking the region onto the reference cell of the strategy: the unit ball
/// (divide by the circumradius) for transferable sets, [-1,1]^d for uniform sets.
inline BasisSet normalize_to_region(const BasisSet& base, const BaseRegion& region) {
  if (base.info().strategy == Strategy::transferable)
    return base.with_affine(region.center(), 1.0 / region.circumradius());
  const Point half = 0.5 * (region.outer().hi - region.outer().lo);
  return base.with_affine(region.center(), 1.0 / half.maxCoeff());
}

inline nlohmann::json to_json(const BasisSet& set) {
  nlohmann::json j;
  j["strategy"] = to_string(set.info().strategy);
  j["seed"] = set.info().seed;
  j["stream"] = set.info().stream;
  j["gamma"] = set.info().gamma;
  j["range"] = set.info().range;
  j["scale"] = set.scale();
  j["center"] = std::vector<double>(set.center().data(), set.center().data() + set.dim());
  auto& neurons = j["neurons"] = nlohmann::json::array();
  for (Eigen::Index m = 1; m <= set.num_neurons(); ++m) {
    const Neuron n = set.neuron(m);
    neurons.push_back({{"w", std::vector<double>(n.w.data(), n.w.data() + n.w.size())},
                       {"b", n.b}});
  }
  return j;
}

inline BasisSet basis_from_json(const nlohmann::json& j) {
  const auto center = j.at("center").get<std::vector<double>>();
  const auto& neurons = j.at("neurons");
  const auto d = static_cast<Eigen::Index>(center.size());
  const auto M = static_cast<Eigen::Index>(neurons.size());
  Eigen::MatrixXd W(M, d);
  Eigen::VectorXd b(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    const auto w = neurons[m].at("w").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != d) throw ConfigError("basis json: bad weight length");
    for (Eigen::Index i = 0; i < d; ++i) W(m, i) = w[i];
    b(m) = neurons[m].at("b").get<double>();
  }
  Point c(d);
  for (Eigen::Index i = 0; i < d; ++i) c(i) = center[i];
  GenerationInfo info{strategy_from_string(j.at("strategy").get<std::string>()),
                      j.at("seed").get<std::uint64_t>(), j.at("stream").get<std::uint64_t>(),
                      j.at("gamma").get<double>(), j.at("range").get<double>()};
  return BasisSet(std::move(W), std::move(b), std::move(c), j.at("scale").get<double>(), info);
}

}  // namespace annb
