#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace sechyp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: wrong dimension, bad config, out-of-range knob.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Query outside the domain of a stored object (e.g. time outside a span).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Step size fell below the guard; `last_time` is the last time reached.
class IntegrationFailure : public NumericError {
 public:
  IntegrationFailure(const std::string& what, double last_time)
      : NumericError(what), last_time(last_time) {}
  double last_time;
};

/// The state became non-finite.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, double last_time)
      : NumericError(what), last_time(last_time) {}
  double last_time;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

inline std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace sechyp
