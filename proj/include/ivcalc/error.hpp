#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace ivcalc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad dataset rows, invalid model parameters, bad config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An estimator could not produce a result from otherwise valid input.
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// The identification system has rank below the number of unknowns.
/// `null_space()` holds an orthonormal basis of the unidentified directions.
class UnderidentifiedError : public EstimationError {
 public:
  UnderidentifiedError(const std::string& what, Eigen::MatrixXd null_space)
      : EstimationError(what), null_space_(std::move(null_space)) {}

  const Eigen::MatrixXd& null_space() const noexcept { return null_space_; }

 private:
  Eigen::MatrixXd null_space_;
};

}  // namespace ivcalc
