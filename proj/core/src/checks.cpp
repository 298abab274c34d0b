#include "darn/checks.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <utility>

#include "darn/data.hpp"
#include "darn/discrepancy.hpp"
#include "darn/rng.hpp"
#include "darn/simplex.hpp"
#include "darn/trainer.hpp"

namespace darn {
namespace {

constexpr int kDims[] = {2, 3, 5, 10};

// pinned tolerances
constexpr double kMembershipTol = 1e-12;
constexpr double kResidualTol = 1e-10;
constexpr double kOptimalitySlack = 1e-8;
constexpr double kJacobianRelTol = 1e-5;
constexpr double kColsumTol = 1e-10;
constexpr double kJvpTol = 1e-12;
constexpr double kDanskinTol = 1e-8;
constexpr double kClosedFormTol = 1e-9;
constexpr double kFlatTol = 1e-3;
constexpr double kShiftTol = 1e-10;
constexpr double kPowerTol = 1e-6;
constexpr double kTimingRatioBound = 20.0;
constexpr double kStabilityMargin = 1e-3;

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::VectorXd random_z(int k, Rng& rng) {
  Eigen::VectorXd z(k);
  for (int i = 0; i < k; ++i) z[i] = rng.uniform(-3.0, 3.0);
  return z;
}

// objective the projection minimizes over the simplex
double weight_objective(const Eigen::VectorXd& z, const Eigen::VectorXd& alpha) {
  return -z.dot(alpha) + alpha.norm();
}

// points whose support survives coordinate nudges of |h| <= kStabilityMargin/2
std::vector<Eigen::VectorXd> support_stable_points(int count, double nu_tol,
                                                   std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xF1));
  std::vector<Eigen::VectorXd> out;
  std::size_t dim_at = 0;
  while (out.size() < static_cast<std::size_t>(count)) {
    const int k = kDims[dim_at % 4];
    ++dim_at;
    const Eigen::VectorXd z = random_z(k, rng);
    const ProjectionResult pr = darn_project(z, nu_tol);
    bool stable = true;
    std::vector<char> on(static_cast<std::size_t>(k), 0);
    for (int i : pr.weights.support) on[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < k; ++i) {
      const double gap = z[i] - pr.nu;
      if (on[static_cast<std::size_t>(i)] != 0 ? gap < kStabilityMargin
                                               : gap > -kStabilityMargin) {
        stable = false;
        break;
      }
    }
    if (stable) out.push_back(z);
  }
  return out;
}

// all simplex grid points with n steps per axis, k in {2, 3}
Eigen::MatrixXd simplex_grid(int k, int n) {
  std::vector<Eigen::VectorXd> pts;
  if (k == 2) {
    for (int i = 0; i <= n; ++i) {
      Eigen::VectorXd a(2);
      a << static_cast<double>(i) / n, static_cast<double>(n - i) / n;
      pts.push_back(a);
    }
  } else {
    for (int i = 0; i <= n; ++i) {
      for (int j = 0; i + j <= n; ++j) {
        Eigen::VectorXd a(3);
        a << static_cast<double>(i) / n, static_cast<double>(j) / n,
            static_cast<double>(n - i - j) / n;
        pts.push_back(a);
      }
    }
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), k);
  for (std::size_t r = 0; r < pts.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = pts[r];
  return m;
}

Eigen::MatrixXd dirichlet_uniform(int count, int k, Rng& rng) {
  Eigen::MatrixXd m(count, k);
  for (int r = 0; r < count; ++r) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double e = -std::log(1.0 - rng.uniform());
      m(r, c) = e;
      sum += e;
    }
    m.row(r) /= sum;
  }
  return m;
}

// worst objective gap f(alpha*) - min_candidates f(alpha) over all z rows
double candidate_gap(const Eigen::MatrixXd& candidates, const std::vector<Eigen::VectorXd>& zs,
                     const std::vector<double>& f_star) {
  const Eigen::VectorXd norms = candidates.rowwise().norm();
  double worst = -1e300;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const double best = (norms - candidates * zs[i]).minCoeff();
    worst = std::max(worst, f_star[i] - best);
  }
  return worst;
}

}  // namespace

CheckProfile CheckProfile::dflt() { return {}; }

CheckProfile CheckProfile::fast() {
  CheckProfile p;
  p.projection_samples = 100;
  p.grid_per_axis = 50;
  p.dirichlet_samples = 1000;
  p.jacobian_points = 60;
  p.toy_steps = 4;
  p.power_matrices = 25;
  p.power_max_size = 30;
  p.run_timing = false;
  return p;
}

CheckResult check_projection_optimality(const CheckProfile& p) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(p.seed, 0xF2));
  double worst_membership = 0.0;
  double worst_residual = 0.0;
  double worst_gap = -1e300;
  for (const int k : kDims) {
    std::vector<Eigen::VectorXd> zs;
    std::vector<double> f_star;
    zs.reserve(static_cast<std::size_t>(p.projection_samples));
    for (int t = 0; t < p.projection_samples; ++t) {
      const Eigen::VectorXd z = random_z(k, rng);
      const ProjectionResult pr = darn_project(z, p.nu_tol);
      const Eigen::VectorXd& a = pr.weights.alpha;
      worst_membership = std::max(worst_membership, std::abs(a.sum() - 1.0));
      worst_membership = std::max(worst_membership, std::max(0.0, -a.minCoeff()));
      const double len = (z.array() - pr.nu).max(0.0).matrix().norm();
      worst_residual = std::max(worst_residual, std::abs(len - 1.0));
      zs.push_back(z);
      f_star.push_back(weight_objective(z, a));
    }
    if (k <= 3) {
      worst_gap = std::max(worst_gap, candidate_gap(simplex_grid(k, p.grid_per_axis), zs, f_star));
    }
    worst_gap =
        std::max(worst_gap, candidate_gap(dirichlet_uniform(p.dirichlet_samples, k, rng), zs, f_star));
  }
  const double secs = elapsed_s(t0);
  CheckResult r;
  r.name = "projection-optimality";
  r.passed = worst_membership <= kMembershipTol && worst_residual <= kResidualTol &&
             worst_gap <= kOptimalitySlack && secs < 30.0;
  r.detail = fmt("membership %.2e, residual %.2e, candidate gap %.2e", worst_membership,
                 worst_residual, worst_gap) +
             fmt(", %.1fs", secs);
  return r;
}

CheckResult check_closed_form(const CheckProfile& p) {
  // two coordinates distance d apart: the heavy weight is 1/2 + d/(2*sqrt(2-d^2))
  const double d = 0.5;
  Eigen::VectorXd z(2);
  z << d, 0.0;
  const double expect = 0.5 + d / (2.0 * std::sqrt(2.0 - d * d));
  const ProjectionResult pr = darn_project(z, p.nu_tol);
  const double err = std::abs(pr.weights.alpha[0] - expect);
  CheckResult r;
  r.name = "closed-form-k2";
  r.passed = err <= kClosedFormTol;
  r.detail = fmt("alpha0 error %.2e vs analytic %.15g", err, expect);
  return r;
}

CheckResult check_jacobian_fd(const CheckProfile& p) {
  const auto points = support_stable_points(p.jacobian_points, p.nu_tol, p.seed);
  Rng rng(derive_seed(p.seed, 0xF3));
  const double h = 1e-6;
  double worst_rel = 0.0;
  double worst_colsum = 0.0;
  double worst_sym = 0.0;
  double worst_jvp = 0.0;
  for (const Eigen::VectorXd& z : points) {
    const int k = static_cast<int>(z.size());
    const ProjectionResult pr = darn_project(z, p.nu_tol);
    const Eigen::MatrixXd jac = darn_jacobian(z, pr);
    for (int j = 0; j < k; ++j) {
      Eigen::VectorXd zp = z, zm = z;
      zp[j] += h;
      zm[j] -= h;
      const Eigen::VectorXd col =
          (darn_project(zp, p.nu_tol).weights.alpha - darn_project(zm, p.nu_tol).weights.alpha) /
          (2.0 * h);
      for (int i = 0; i < k; ++i) {
        const double denom = std::max({std::abs(jac(i, j)), std::abs(col[i]), 1e-4});
        worst_rel = std::max(worst_rel, std::abs(jac(i, j) - col[i]) / denom);
      }
    }
    worst_colsum = std::max(worst_colsum, jac.colwise().sum().cwiseAbs().maxCoeff());
    worst_sym = std::max(worst_sym, (jac - jac.transpose()).cwiseAbs().maxCoeff());
    Eigen::VectorXd v(k);
    for (int i = 0; i < k; ++i) v[i] = rng.uniform(-1.0, 1.0);
    worst_jvp = std::max(
        worst_jvp, (darn_jvp(z, pr, v) - jac * v).lpNorm<Eigen::Infinity>());
  }
  CheckResult r;
  r.name = "jacobian-fd";
  r.passed = worst_rel < kJacobianRelTol && worst_colsum < kColsumTol &&
             worst_sym <= 1e-14 && worst_jvp <= kJvpTol;
  r.detail = fmt("fd rel %.2e, colsum %.2e, jvp gap %.2e", worst_rel, worst_colsum, worst_jvp);
  return r;
}

CheckResult check_danskin(const CheckProfile& p) {
  // certificate: at the optimum, z - alpha/|alpha| is constant on the support,
  // so the jacobian annihilates it
  const auto points = support_stable_points(p.jacobian_points, p.nu_tol, p.seed);
  double worst_cert = 0.0;
  for (const Eigen::VectorXd& z : points) {
    const ProjectionResult pr = darn_project(z, p.nu_tol);
    const Eigen::VectorXd w = z - pr.weights.alpha / pr.weights.alpha.norm();
    worst_cert = std::max(worst_cert, darn_jvp(z, pr, w).lpNorm<Eigen::Infinity>());
  }

  // the two weighting-gradient paths must produce the same training run
  const MultiDomainDataset data = gen_rotated_gaussians(3, 24, {0.0, 20.0, 40.0, 10.0}, 0.4,
                                                        derive_seed(p.seed, 0xF4));
  TrainConfig cfg;
  cfg.tau = 2.0;
  cfg.dropout = 0.2;
  cfg.feature_layers = {6};
  cfg.domain_hidden = {4};
  cfg.nu_tol = p.nu_tol;
  cfg.seed = derive_seed(p.seed, 0xF5);
  TrainConfig env = cfg;
  env.gradient_path = GradientPath::envelope;

  Architecture arch;
  arch.input_dim = 2;
  arch.feature_layers = cfg.feature_layers;
  arch.label_outputs = 2;
  arch.domain_hidden = cfg.domain_hidden;
  arch.num_domains = 3;
  arch.dropout = cfg.dropout;
  ModelParams mj = init_model(arch, cfg.seed);
  ModelParams me = init_model(arch, cfg.seed);
  OptimizerState oj = OptimizerState::create(mj, cfg.optimizer);
  OptimizerState oe = OptimizerState::create(me, cfg.optimizer);

  std::vector<Batch> sources;
  for (const auto& s : data.sources) {
    std::vector<int> rows(static_cast<std::size_t>(s.rows()));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
    sources.push_back(gather(s, rows));
  }
  std::vector<int> trows(static_cast<std::size_t>(data.target_train.rows()));
  for (std::size_t i = 0; i < trows.size(); ++i) trows[i] = static_cast<int>(i);
  const Batch target = gather(data.target_train, trows);

  double worst_step = 0.0;
  for (int s = 0; s < p.toy_steps; ++s) {
    const std::uint64_t ss = derive_seed(cfg.seed, 0xF6, s);
    train_step(mj, oj, sources, target, cfg, ss);
    train_step(me, oe, sources, target, env, ss);
    const auto vj = param_views(std::as_const(mj));
    const auto ve = param_views(std::as_const(me));
    for (std::size_t b = 0; b < vj.size(); ++b) {
      worst_step = std::max(worst_step, (vj[b] - ve[b]).lpNorm<Eigen::Infinity>());
    }
  }

  CheckResult r;
  r.name = "danskin";
  r.passed = worst_cert < kDanskinTol && worst_step <= kDanskinTol;
  r.detail = fmt("certificate %.2e, path divergence %.2e over ", worst_cert, worst_step) +
             std::to_string(p.toy_steps) + " steps";
  return r;
}

CheckResult check_temperature_limits(const CheckProfile& p) {
  Eigen::VectorXd g(3);
  g << 0.1, 0.4, 0.9;
  TrainConfig cfg;
  cfg.nu_tol = p.nu_tol;

  cfg.tau = 0.2;  // below the smallest objective gap
  const Eigen::VectorXd sharp = aggregate(g, cfg).weights.alpha;
  const bool onehot = sharp[0] == 1.0 && sharp[1] == 0.0 && sharp[2] == 0.0;

  cfg.tau = 1e4;
  const Eigen::VectorXd flat = aggregate(g, cfg).weights.alpha;
  const double flat_err = (flat.array() - 1.0 / 3.0).abs().maxCoeff();

  CheckResult r;
  r.name = "temperature-limits";
  r.passed = onehot && flat_err < kFlatTol;
  r.detail = std::string("low-tau one-hot ") + (onehot ? "yes" : "no") +
             fmt(", high-tau spread %.2e", flat_err);
  return r;
}

CheckResult check_shift_invariance(const CheckProfile& p) {
  Rng rng(derive_seed(p.seed, 0xF7));
  const double shifts[] = {1.0, -1.0, 1e6, -1e6};
  double worst = 0.0;
  for (const int k : kDims) {
    for (int t = 0; t < 50; ++t) {
      // snap to 2^-20 so z + 1e6 is exactly representable and the check
      // measures the algorithm, not the rounding of its inputs
      Eigen::VectorXd z = random_z(k, rng);
      for (int i = 0; i < k; ++i) z[i] = std::round(z[i] * 1048576.0) / 1048576.0;
      const Eigen::VectorXd base = darn_project(z, p.nu_tol).weights.alpha;
      for (const double c : shifts) {
        const Eigen::VectorXd shifted =
            darn_project((z.array() + c).matrix(), p.nu_tol).weights.alpha;
        worst = std::max(worst, (base - shifted).lpNorm<Eigen::Infinity>());
      }
    }
  }
  CheckResult r;
  r.name = "shift-invariance";
  r.passed = worst <= kShiftTol;
  r.detail = fmt("max weight drift %.2e across shifts of 1 and 1e6", worst);
  return r;
}

CheckResult check_power_iteration(const CheckProfile& p) {
  Rng rng(derive_seed(p.seed, 0xF8));
  double worst = 0.0;
  for (int t = 0; t < p.power_matrices; ++t) {
    const int n = 2 + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(p.power_max_size - 1)));
    Eigen::MatrixXd b(n, n);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-1.0, 1.0);
    const Eigen::MatrixXd m = 0.5 * (b + b.transpose());
    const double oracle =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().cwiseAbs().maxCoeff();
    const PowerIterationResult est =
        power_iteration(m, 200000, 1e-13, derive_seed(p.seed, 0xF9, t));
    worst = std::max(worst, std::abs(est.value - oracle));
  }
  Eigen::MatrixXd same(3, 3);
  same << 2, 1, 0, 1, -1, 0.5, 0, 0.5, 3;
  const bool zero_gap = disc_regression(same, same) == 0.0;
  CheckResult r;
  r.name = "power-iteration";
  r.passed = worst <= kPowerTol && zero_gap;
  r.detail = fmt("max |value - oracle| %.2e", worst) +
             (zero_gap ? ", identical moments give 0" : ", identical moments give nonzero");
  return r;
}

CheckResult check_complexity(const CheckProfile& p) {
  Rng rng(derive_seed(p.seed, 0xFA));
  auto median_time = [&](int k) {
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(p.timing_trials));
    for (int t = 0; t < p.timing_trials; ++t) {
      const Eigen::VectorXd z = random_z(k, rng);
      const auto t0 = std::chrono::steady_clock::now();
      volatile double sink = find_nu(z, p.nu_tol);
      sink = sink + darn_project(z, p.nu_tol).nu;
      (void)sink;
      times.push_back(elapsed_s(t0));
    }
    std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
    return times[times.size() / 2];
  };
  const double small = median_time(p.timing_k_small);
  const double large = median_time(p.timing_k_large);
  const double ratio = large / small;
  CheckResult r;
  r.name = "complexity-scaling";
  r.passed = ratio <= kTimingRatioBound;
  r.detail = fmt("median %.1fus at k=1e3, %.1fus at k=1e4, ratio %.1f", small * 1e6, large * 1e6,
                 ratio) +
             fmt(" (bound %.0f)", kTimingRatioBound);
  return r;
}

std::vector<CheckResult> run_all_checks(const CheckProfile& p) {
  using Fn = std::function<CheckResult(const CheckProfile&)>;
  std::vector<std::pair<const char*, Fn>> checks = {
      {"projection-optimality", check_projection_optimality},
      {"closed-form-k2", check_closed_form},
      {"jacobian-fd", check_jacobian_fd},
      {"danskin", check_danskin},
      {"temperature-limits", check_temperature_limits},
      {"shift-invariance", check_shift_invariance},
      {"power-iteration", check_power_iteration},
  };
  if (p.run_timing) checks.emplace_back("complexity-scaling", check_complexity);
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    try {
      out.push_back(fn(p));
    } catch (const std::exception& e) {
      CheckResult r;
      r.name = name;
      r.passed = false;
      r.detail = std::string("threw: ") + e.what();
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace darn
