#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace tmr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Malformed or inconsistent input data. The message names the offending
/// file and line when the data came from disk.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered, SVD failure, or solver divergence.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A metric whose denominator vanishes (NMAE, N_CV).
class MetricError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace tmr
