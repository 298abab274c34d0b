#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace darn {

/// One row of the self-check table.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // metric summary, filled on success and failure alike
};

/// Sample counts and tolerance knobs for the self-checks. nu_tol is a fault
/// hook: loosening it (e.g. to 0.1) must trip the danskin check.
struct CheckProfile {
  int projection_samples = 1000;  // per dimension in {2, 3, 5, 10}
  int grid_per_axis = 200;
  int dirichlet_samples = 10000;  // per dimension
  int jacobian_points = 500;
  int toy_steps = 8;
  int power_matrices = 100;
  int power_max_size = 50;
  bool run_timing = true;
  int timing_k_small = 1000;
  int timing_k_large = 10000;
  int timing_trials = 21;
  double nu_tol = 1e-12;
  std::uint64_t seed = 20240901;

  static CheckProfile dflt();
  static CheckProfile fast();
};

CheckResult check_projection_optimality(const CheckProfile& p);
CheckResult check_closed_form(const CheckProfile& p);
CheckResult check_jacobian_fd(const CheckProfile& p);
CheckResult check_danskin(const CheckProfile& p);
CheckResult check_temperature_limits(const CheckProfile& p);
CheckResult check_shift_invariance(const CheckProfile& p);
CheckResult check_power_iteration(const CheckProfile& p);
CheckResult check_complexity(const CheckProfile& p);

/// All checks above, in order, complexity included only when p.run_timing.
/// A check that throws is reported as failed with the exception text.
std::vector<CheckResult> run_all_checks(const CheckProfile& p);

}  // namespace darn
