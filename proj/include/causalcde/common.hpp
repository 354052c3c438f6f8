#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace causalcde {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Thrown when a caller breaks a documented precondition or type invariant.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Thrown when linear algebra fails beyond the retry policy (Cholesky after
// jitter escalation, non-finite losses, persistent non-PD covariances).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Inverse of softplus; defined for y > 0.
inline double softplus_inv(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kLogTwoPi = 1.8378770664093454836;

}  // namespace causalcde
