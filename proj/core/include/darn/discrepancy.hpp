#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace darn {

/// Mean logistic loss of a domain classifier whose labels are 1 on target
/// rows and 0 on source rows (the eps-hat estimate).
double domain_classifier_error(const Eigen::VectorXd& logits,
                               const std::vector<bool>& is_target);

/// Classification discrepancy proxy 2*(1 - eps_hat), clamped below at zero.
double disc_classification(double eps_hat);

/// Uncentered second moment (1/m) F^T F of m feature rows.
Eigen::MatrixXd second_moment(const Eigen::MatrixXd& features);

struct PowerIterationResult {
  double value = 0.0;      // magnitude of the dominant eigenvalue
  Eigen::VectorXd vector;  // unit eigenvector estimate
  int iterations = 0;
};

/// Dominant-eigenvalue estimate for a symmetric matrix by seeded power
/// iteration with a Rayleigh-quotient estimate; stops when successive
/// estimates differ by less than tol or after max_iters matrix products.
/// A zero (or nullspace-aligned) iterate returns value 0 with the current
/// unit vector rather than erroring.
PowerIterationResult power_iteration(const Eigen::MatrixXd& m, int max_iters, double tol,
                                     std::uint64_t seed);

/// Regression discrepancy: the spectral norm of M_target - M_source,
/// estimated by power iteration.
double disc_regression(const Eigen::MatrixXd& m_target, const Eigen::MatrixXd& m_source,
                       int max_iters = 20, double tol = 1e-7, std::uint64_t seed = 0);

}  // namespace darn
