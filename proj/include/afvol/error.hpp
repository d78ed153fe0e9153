#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace afvol {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (e.g. backward on a non-scalar root).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Model parameters violate positivity or stationarity constraints.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed, too short or degenerate.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A sequence is longer than a fixed-capacity parameter allows.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Invalid run or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Maximum-likelihood search could not improve on its starting point.
/// Carries the best point seen so the caller can inspect it.
class FitError : public Error {
 public:
  FitError(const std::string& what, std::vector<double> best_point, double best_value)
      : Error(what), best_point_(std::move(best_point)), best_value_(best_value) {}

  const std::vector<double>& best_point() const noexcept { return best_point_; }
  double best_value() const noexcept { return best_value_; }

 private:
  std::vector<double> best_point_;
  double best_value_;
};

}  // namespace afvol
