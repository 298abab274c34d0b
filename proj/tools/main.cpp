#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "darn/checks.hpp"
#include "darn/errors.hpp"
#include "darn/trainer.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override) {
  darn::RunConfig rc;
  darn::MultiDomainDataset data;
  try {
    rc = darn::load_run_config(config_path, out_override);
    data = darn::build_dataset(rc.data);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  darn::TrainResult result;
  try {
    result = darn::train(data, rc.train);
  } catch (const darn::DivergenceError& e) {
    std::cerr << "run diverged: " << e.what() << "\n";
    return 3;
  } catch (const darn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    fs::create_directories(rc.output_dir);
    const fs::path dir(rc.output_dir);
    darn::write_trainlog_csv((dir / "trainlog.csv").string(), result.log);
    darn::write_eval_csv((dir / "eval.csv").string(), result.log);
    darn::write_summary_json((dir / "summary.json").string(), result.log, rc.resolved.dump());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::printf("final eval_metric %.6g after %d epochs; outputs in %s\n", result.log.final_eval,
              static_cast<int>(result.log.epochs.size()), rc.output_dir.c_str());
  return 0;
}

int cmd_verify(const std::string& profile, double nu_tol) {
  darn::CheckProfile p =
      profile == "fast" ? darn::CheckProfile::fast() : darn::CheckProfile::dflt();
  if (nu_tol > 0.0) p.nu_tol = nu_tol;

  const std::vector<darn::CheckResult> results = darn::run_all_checks(p);
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::string failing;
  for (const auto& r : results) {
    std::printf("%-*s  %s  %s\n", static_cast<int>(width), r.name.c_str(),
                r.passed ? "PASS" : "FAIL", r.detail.c_str());
    if (!r.passed) failing += (failing.empty() ? "" : ", ") + r.name;
  }
  if (!failing.empty()) {
    std::fflush(stdout);
    std::fprintf(stderr, "verification failed: %s\n", failing.c_str());
    return 1;
  }
  std::printf("all %d checks passed\n", static_cast<int>(results.size()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-source domain adaptation with simplex-projected domain weights"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  CLI::App* run = app.add_subcommand("run", "train from a JSON config and write CSV/JSON outputs");
  run->add_option("config", config_path, "path to the run configuration (JSON)")->required();
  run->add_option("--out", out_override, "output directory (overrides the config's output_dir)");

  std::string profile = "default";
  double nu_tol = 0.0;
  CLI::App* verify = app.add_subcommand("verify", "run the numeric self-checks");
  verify->add_option("--profile", profile, "default | fast")
      ->check(CLI::IsMember({"default", "fast"}));
  // undocumented hook for exercising the failure path: loosens the projection
  // tolerance, which must make the optimality-certificate check fail
  verify->add_option("--nu-tol", nu_tol)->group("");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return cmd_run(config_path, out_override);
  return cmd_verify(profile, nu_tol);
}
