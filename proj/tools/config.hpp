#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "darn/data.hpp"
#include "darn/trainer.hpp"

namespace darn {

/// Dataset block of a run configuration: either the synthetic generator or
/// one text file per domain.
struct DataSpec {
  bool from_files = false;

  // generator = "rotated_gaussians"
  int k = 3;
  int m = 200;
  std::vector<double> angles_deg;  // k source angles, then the target angle
  double noise = 0.3;
  std::uint64_t seed = 0;
  int flip_domain = -1;  // < 0: no adversarial flip
  double flip_fraction = 0.0;

  // files
  std::vector<std::string> source_paths;
  std::string target_train_path;
  std::string target_eval_path;
  int dim = 0;  // 0 infers the feature dimension from the files
};

struct RunConfig {
  TrainConfig train;
  DataSpec data;
  std::string output_dir = "out";
  nlohmann::json resolved;  // full config with defaults filled in; echoed into summary.json
};

/// Parse and validate a JSON config file. Unknown keys, wrong types, and
/// invalid values raise ConfigError naming the offending field; a non-empty
/// out_override replaces the config's output_dir before resolution.
RunConfig load_run_config(const std::string& path, const std::string& out_override = "");

/// Materialize the dataset a config asks for. File problems surface as
/// ParseError (malformed line) or std::runtime_error (unreadable path).
MultiDomainDataset build_dataset(const DataSpec& spec);

}  // namespace darn
