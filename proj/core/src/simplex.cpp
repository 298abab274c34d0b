#include "darn/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "darn/errors.hpp"

namespace darn {
namespace {

// Squared residual ||[z - nu*1]_+||_2^2.
double phi2(const Eigen::VectorXd& z, double nu) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double p = z[i] - nu;
    if (p > 0.0) s += p * p;
  }
  return s;
}

struct NuSearch {
  double nu = 0.0;  // base + offset, rounded
  // The threshold is carried as base + offset: base sits at the data's
  // magnitude (differences z_i - base are exact for clustered z), offset is
  // an O(1) correction. Forming positive parts as (z_i - base) - offset
  // keeps the projection stable under shifts as large as 1e6.
  double base = 0.0;
  double offset = 0.0;
  int steps = 0;
};

// phi(nu) = ||[z - nu*1]_+||_2 is continuous and strictly decreasing where
// positive, with phi(min(z) - 1) >= 1 and phi(max(z)) = 0, so the root of
// phi = 1 is bracketed by [min(z) - 1, max(z)] and bisection applies.
NuSearch bisect_nu(const Eigen::VectorXd& z, double tol) {
  double lo = z.minCoeff() - 1.0;
  double hi = z.maxCoeff();
  NuSearch out;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket at floating-point resolution
    if (phi2(z, mid) > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    ++out.steps;
  }
  out.nu = 0.5 * (lo + hi);
  return out;
}

// Closed-form threshold offset for the support selected by nu_hint: working
// on the exact differences u_i = z_i - hint, with ubar their support mean
// and SS = sum_S (u_i - ubar)^2, the constraint sum_S (z_i - nu)^2 = 1 reads
// |S|*(ubar - off)^2 = 1 - SS, giving nu = hint + ubar - sqrt((1 - SS)/|S|).
// Centering on the hint is immune to cancellation under large shifts of z.
// Returns the offset, or NaN when the support admits no solution (SS >= 1).
double nu_offset_closed_form(const Eigen::VectorXd& z, double hint, int* support_size) {
  double sum = 0.0;
  int s = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double u = z[i] - hint;
    if (u > 0.0) {
      sum += u;
      ++s;
    }
  }
  *support_size = s;
  if (s == 0) return std::numeric_limits<double>::quiet_NaN();
  const double ubar = sum / s;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double u = z[i] - hint;
    if (u > 0.0) {
      const double d = u - ubar;
      ss += d * d;
    }
  }
  const double disc = (1.0 - ss) / s;
  if (!(disc > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return ubar - std::sqrt(disc);
}

NuSearch solve_nu(const Eigen::VectorXd& z, double tol) {
  NuSearch b = bisect_nu(z, tol);
  b.base = b.nu;
  b.offset = 0.0;
  int s = 0;
  const double off = nu_offset_closed_form(z, b.base, &s);
  if (std::isfinite(off)) {
    // Supports are nested in the threshold, so the refined value reproduces
    // the bracketed support iff the support sizes agree.
    int s_cf = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (z[i] - b.base > off) ++s_cf;
    }
    if (s_cf == s) b.offset = off;
  }
  b.nu = b.base + b.offset;
  return b;
}

// Shared validation for the Jacobian ops: recompute the curvature term
// A = |S|*(1 - SS) on the stored support. For a consistent solution
// A = K^2 with K = ||[z - nu*1]_+||_1 >= 1; A <= 0 means the support does
// not describe a projection output.
double curvature_k(const Eigen::VectorXd& z, const ProjectionResult& at) {
  const auto& sup = at.weights.support;
  if (sup.empty()) {
    throw DegeneratePointError("jacobian requested with empty support");
  }
  double sum = 0.0;
  for (int i : sup) sum += z[i];
  const double zbar = sum / static_cast<double>(sup.size());
  double ss = 0.0;
  for (int i : sup) {
    const double d = z[i] - zbar;
    ss += d * d;
  }
  const double a = static_cast<double>(sup.size()) * (1.0 - ss);
  if (!(a > 0.0)) {
    throw DegeneratePointError("jacobian requested at a degenerate point (A <= 0)");
  }
  return std::sqrt(a);
}

}  // namespace

double find_nu(const Eigen::VectorXd& z, double tol) {
  return solve_nu(z, tol).nu;
}

ProjectionResult darn_project(const Eigen::VectorXd& z, double tol) {
  const NuSearch ns = solve_nu(z, tol);
  const Eigen::Index k = z.size();
  ProjectionResult r;
  r.nu = ns.nu;
  r.bisection_steps = ns.steps;
  r.weights.alpha = Eigen::VectorXd::Zero(k);
  double l1 = 0.0, l2sq = 0.0;
  std::vector<double> parts;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double p = (z[i] - ns.base) - ns.offset;
    if (p > 0.0) {
      r.weights.support.push_back(static_cast<int>(i));
      parts.push_back(p);
      l1 += p;
      l2sq += p * p;
    }
  }
  if (r.weights.support.empty()) {
    // Unreachable for a correct bracket; fall back to the exact singleton
    // solution at the largest coordinate.
    Eigen::Index j = 0;
    z.maxCoeff(&j);
    r.nu = z[j] - 1.0;
    r.weights.support.push_back(static_cast<int>(j));
    parts.assign(1, 1.0);
    l1 = 1.0;
    l2sq = 1.0;
  }
  for (std::size_t t = 0; t < r.weights.support.size(); ++t) {
    r.weights.alpha[r.weights.support[t]] = parts[t] / l1;
  }
  r.residual = std::sqrt(l2sq);
  return r;
}

Eigen::MatrixXd darn_jacobian(const Eigen::VectorXd& z, const ProjectionResult& at) {
  const double kk = curvature_k(z, at);
  const auto& sup = at.weights.support;
  const int s = static_cast<int>(sup.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(z.size(), z.size());
  // J_ij = (delta_ij - a_i - a_j + |S|*a_i*a_j) / K on the support, 0 off it.
  for (int ii = 0; ii < s; ++ii) {
    const double ai = at.weights.alpha[sup[ii]];
    for (int jj = ii; jj < s; ++jj) {
      const double aj = at.weights.alpha[sup[jj]];
      double v = -ai - aj + s * ai * aj;
      if (ii == jj) v += 1.0;
      v /= kk;
      jac(sup[ii], sup[jj]) = v;
      jac(sup[jj], sup[ii]) = v;
    }
  }
  return jac;
}

Eigen::VectorXd darn_jvp(const Eigen::VectorXd& z, const ProjectionResult& at,
                         const Eigen::VectorXd& v) {
  const double kk = curvature_k(z, at);
  const auto& sup = at.weights.support;
  const double s = static_cast<double>(sup.size());
  double v1 = 0.0, va = 0.0;
  for (int i : sup) {
    v1 += v[i];
    va += at.weights.alpha[i] * v[i];
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(z.size());
  for (int i : sup) {
    const double ai = at.weights.alpha[i];
    out[i] = (v[i] - ai * v1 - va + s * ai * va) / kk;
  }
  return out;
}

SimplexWeights sparsemax(const Eigen::VectorXd& z) {
  const Eigen::Index k = z.size();
  std::vector<double> sorted(z.data(), z.data() + k);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cum = 0.0, cum_at = 0.0;
  int keep = 0;
  for (int j = 0; j < k; ++j) {
    cum += sorted[j];
    if (1.0 + (j + 1) * sorted[j] > cum) {
      keep = j + 1;
      cum_at = cum;
    }
  }
  const double theta = (cum_at - 1.0) / keep;
  SimplexWeights w;
  w.alpha = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double p = z[i] - theta;
    if (p > 0.0) {
      w.alpha[i] = p;
      w.support.push_back(static_cast<int>(i));
    }
  }
  return w;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

double aggregate_objective(const Eigen::VectorXd& g, const Eigen::VectorXd& alpha,
                           double tau) {
  return g.dot(alpha) + tau * alpha.norm();
}

double effective_sample_size(const Eigen::VectorXd& alpha, int m) {
  return static_cast<double>(m) / alpha.squaredNorm();
}

}  // namespace darn
