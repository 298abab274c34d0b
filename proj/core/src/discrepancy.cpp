#include "darn/discrepancy.hpp"

#include <cmath>
#include <stdexcept>

#include "darn/nn.hpp"
#include "darn/rng.hpp"

namespace darn {
namespace {
constexpr std::uint64_t kStreamPowerInit = 0xC1;
}

double domain_classifier_error(const Eigen::VectorXd& logits,
                               const std::vector<bool>& is_target) {
  return logistic_loss(logits, is_target, nullptr);
}

double disc_classification(double eps_hat) {
  return std::max(0.0, 2.0 * (1.0 - eps_hat));
}

Eigen::MatrixXd second_moment(const Eigen::MatrixXd& features) {
  if (features.rows() < 1) throw std::invalid_argument("second_moment: empty feature matrix");
  return features.transpose() * features / static_cast<double>(features.rows());
}

PowerIterationResult power_iteration(const Eigen::MatrixXd& m, int max_iters, double tol,
                                     std::uint64_t seed) {
  if (m.rows() != m.cols() || m.rows() < 1) {
    throw std::invalid_argument("power_iteration: matrix must be square and non-empty");
  }
  const Eigen::Index n = m.rows();
  Rng rng(derive_seed(seed, kStreamPowerInit));
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  v.normalize();

  PowerIterationResult out;
  double rho = 0.0, prev = 0.0;
  bool have_prev = false;
  for (int t = 0; t < max_iters; ++t) {
    const Eigen::VectorXd mv = m * v;
    rho = v.dot(mv);
    ++out.iterations;
    const double nrm = mv.norm();
    if (nrm == 0.0) {
      // v lies in the nullspace; for the zero matrix this reports 0 with the
      // random unit start instead of failing
      out.value = 0.0;
      out.vector = v;
      return out;
    }
    v = mv / nrm;
    if (have_prev && std::abs(rho - prev) < tol) break;
    prev = rho;
    have_prev = true;
  }
  out.value = std::abs(rho);
  out.vector = v;
  return out;
}

double disc_regression(const Eigen::MatrixXd& m_target, const Eigen::MatrixXd& m_source,
                       int max_iters, double tol, std::uint64_t seed) {
  if (m_target.rows() != m_source.rows() || m_target.cols() != m_source.cols()) {
    throw std::invalid_argument("disc_regression: moment shapes differ");
  }
  return power_iteration(m_target - m_source, max_iters, tol, seed).value;
}

}  // namespace darn
