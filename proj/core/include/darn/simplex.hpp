#pragma once

#include <Eigen/Core>
#include <vector>

namespace darn {

/// Point on the probability simplex together with its strict support.
struct SimplexWeights {
  Eigen::VectorXd alpha;
  std::vector<int> support;
};

/// Output of the norm-constrained projection z -> alpha.
struct ProjectionResult {
  SimplexWeights weights;
  double nu = 0.0;        // threshold with ||[z - nu*1]_+||_2 = 1
  double residual = 0.0;  // ||[z - nu*1]_+||_2 actually achieved
  int bisection_steps = 0;
};

/// The unique threshold nu in [min(z) - 1, max(z)) satisfying
/// ||[z - nu*1]_+||_2 = 1. Bisection to |hi - lo| <= tol, then a closed-form
/// refinement on the bracketed support, kept only when self-consistent.
double find_nu(const Eigen::VectorXd& z, double tol = 1e-12);

/// Minimizer of -<z, a> + ||a||_2 over the simplex:
/// alpha = [z - nu*1]_+ / ||[z - nu*1]_+||_1.
ProjectionResult darn_project(const Eigen::VectorXd& z, double tol = 1e-12);

/// d(alpha)/d(z) at fixed support: dense k x k, symmetric, zero row and
/// column sums, zero off the support. Throws DegeneratePointError when the
/// support/threshold pair is inconsistent (curvature term A <= 0).
Eigen::MatrixXd darn_jacobian(const Eigen::VectorXd& z, const ProjectionResult& at);

/// Jacobian-vector product in O(k) time and memory; equals
/// darn_jacobian(z, at) * v.
Eigen::VectorXd darn_jvp(const Eigen::VectorXd& z, const ProjectionResult& at,
                         const Eigen::VectorXd& v);

/// Euclidean projection onto the simplex (sort-based threshold).
SimplexWeights sparsemax(const Eigen::VectorXd& z);

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& z);

/// Aggregate objective <g, alpha> + tau * ||alpha||_2.
double aggregate_objective(const Eigen::VectorXd& g, const Eigen::VectorXd& alpha,
                           double tau);

/// m / ||alpha||_2^2: how many effective examples a weighting retains.
double effective_sample_size(const Eigen::VectorXd& alpha, int m);

}  // namespace darn
