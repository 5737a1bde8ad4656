#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace annb {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition violation detected at an API boundary.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

/// A new ball subdomain would intersect an existing one.
class RefinementConflict : public GeometryError {
 public:
  RefinementConflict(std::size_t offending_index, const std::string& what)
      : GeometryError(what), index_(offending_index) {}
  std::size_t offending_index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Normal requested at the center of a ball.
class DegeneratePoint : public GeometryError {
 public:
  using GeometryError::GeometryError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Iterative solve diverged, or failed to meet its tolerance where convergence is required.
class NonConvergence : public NumericError {
 public:
  using NumericError::NumericError;
  NonConvergence(const std::string& what, std::vector<double> loss_history)
      : NumericError(what), history_(std::move(loss_history)) {}
  /// Loss per completed iteration, when an iterative solve produced one.
  const std::vector<double>& loss_history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// Relative error requested against an identically zero reference.
class UndefinedMetric : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace annb
