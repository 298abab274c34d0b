#include "config.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <utility>

#include "darn/errors.hpp"
#include "darn/rng.hpp"

namespace darn {
namespace {

using nlohmann::json;

constexpr std::uint64_t kStreamFlip = 0xDF;

std::string sub(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void reject_unknown(const json& obj, const std::string& prefix,
                    std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(sub(prefix, it.key()), "unknown key");
  }
}

const json& as_object(const json& v, const std::string& field) {
  if (!v.is_object()) throw ConfigError(field, "must be an object");
  return v;
}

double as_number(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, "must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& field) {
  long long x = 0;
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
      throw ConfigError(field, "out of range");
    x = static_cast<long long>(u);
  } else if (v.is_number_integer()) {
    x = v.get<std::int64_t>();
  } else {
    throw ConfigError(field, "must be an integer");
  }
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw ConfigError(field, "out of range");
  return static_cast<int>(x);
}

std::uint64_t as_seed(const json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const auto s = v.get<std::int64_t>();
    if (s < 0) throw ConfigError(field, "must be a non-negative integer");
    return static_cast<std::uint64_t>(s);
  }
  throw ConfigError(field, "must be a non-negative integer");
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) throw ConfigError(field, "must be a string");
  return v.get<std::string>();
}

std::vector<int> as_int_array(const json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "must be an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_int(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<double> as_number_array(const json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "must be an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_number(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<std::string> as_string_array(const json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "must be an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(as_string(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

template <typename E>
E as_choice(const json& v, const std::string& field,
            std::initializer_list<std::pair<const char*, E>> choices) {
  const std::string s = as_string(v, field);
  for (const auto& [name, value] : choices)
    if (s == name) return value;
  std::string options;
  for (const auto& [name, value] : choices) {
    (void)value;
    options += options.empty() ? name : std::string(" | ") + name;
  }
  throw ConfigError(field, "must be one of: " + options);
}

void parse_optimizer(const json& o, OptimizerConfig& cfg) {
  reject_unknown(o, "optimizer", {"kind", "learning_rate", "momentum", "rho", "epsilon"});
  if (o.contains("kind"))
    cfg.kind = as_choice<OptKind>(o["kind"], "optimizer.kind",
                                  {{"sgd_momentum", OptKind::sgd_momentum},
                                   {"adadelta", OptKind::adadelta}});
  if (o.contains("learning_rate"))
    cfg.learning_rate = as_number(o["learning_rate"], "optimizer.learning_rate");
  if (o.contains("momentum")) cfg.momentum = as_number(o["momentum"], "optimizer.momentum");
  if (o.contains("rho")) cfg.rho = as_number(o["rho"], "optimizer.rho");
  if (o.contains("epsilon")) cfg.epsilon = as_number(o["epsilon"], "optimizer.epsilon");
}

void parse_model(const json& o, TrainConfig& cfg) {
  reject_unknown(o, "model", {"feature_layers", "label_hidden", "domain_hidden", "num_classes"});
  if (o.contains("feature_layers"))
    cfg.feature_layers = as_int_array(o["feature_layers"], "model.feature_layers");
  if (o.contains("label_hidden"))
    cfg.label_hidden = as_int_array(o["label_hidden"], "model.label_hidden");
  if (o.contains("domain_hidden"))
    cfg.domain_hidden = as_int_array(o["domain_hidden"], "model.domain_hidden");
  if (o.contains("num_classes")) cfg.num_classes = as_int(o["num_classes"], "model.num_classes");
}

void parse_data(const json& o, DataSpec& spec) {
  const bool gen = o.contains("generator");
  const bool files = o.contains("files");
  if (gen == files)
    throw ConfigError("data", "need exactly one of 'generator' or 'files'");

  if (gen) {
    reject_unknown(o, "data", {"generator", "k", "m", "angles_deg", "noise", "seed", "flip"});
    spec.from_files = false;
    const std::string name = as_string(o["generator"], "data.generator");
    if (name != "rotated_gaussians")
      throw ConfigError("data.generator", "unknown generator '" + name + "'");
    for (const char* req : {"k", "m", "angles_deg"})
      if (!o.contains(req)) throw ConfigError(sub("data", req), "required for generator datasets");
    spec.k = as_int(o["k"], "data.k");
    if (spec.k < 1) throw ConfigError("data.k", "must be >= 1");
    spec.m = as_int(o["m"], "data.m");
    if (spec.m < 2 || spec.m % 2 != 0) throw ConfigError("data.m", "must be a positive even number");
    spec.angles_deg = as_number_array(o["angles_deg"], "data.angles_deg");
    if (static_cast<int>(spec.angles_deg.size()) != spec.k + 1)
      throw ConfigError("data.angles_deg", "need k+1 entries (source angles, then the target angle)");
    if (o.contains("noise")) {
      spec.noise = as_number(o["noise"], "data.noise");
      if (!(spec.noise >= 0.0)) throw ConfigError("data.noise", "must be >= 0");
    }
    if (o.contains("seed")) spec.seed = as_seed(o["seed"], "data.seed");
    if (o.contains("flip")) {
      const json& f = as_object(o["flip"], "data.flip");
      reject_unknown(f, "data.flip", {"domain", "fraction"});
      for (const char* req : {"domain", "fraction"})
        if (!f.contains(req)) throw ConfigError(sub("data.flip", req), "required");
      spec.flip_domain = as_int(f["domain"], "data.flip.domain");
      if (spec.flip_domain < 0 || spec.flip_domain >= spec.k)
        throw ConfigError("data.flip.domain", "must lie in [0, k)");
      spec.flip_fraction = as_number(f["fraction"], "data.flip.fraction");
      if (!(spec.flip_fraction >= 0.0 && spec.flip_fraction <= 1.0))
        throw ConfigError("data.flip.fraction", "must lie in [0, 1]");
    }
    return;
  }

  reject_unknown(o, "data", {"files"});
  spec.from_files = true;
  const json& f = as_object(o["files"], "data.files");
  reject_unknown(f, "data.files", {"sources", "target_train", "target_eval", "dim"});
  for (const char* req : {"sources", "target_train", "target_eval"})
    if (!f.contains(req)) throw ConfigError(sub("data.files", req), "required");
  spec.source_paths = as_string_array(f["sources"], "data.files.sources");
  if (spec.source_paths.empty())
    throw ConfigError("data.files.sources", "need at least one source file");
  spec.target_train_path = as_string(f["target_train"], "data.files.target_train");
  spec.target_eval_path = as_string(f["target_eval"], "data.files.target_eval");
  if (f.contains("dim")) {
    spec.dim = as_int(f["dim"], "data.files.dim");
    if (spec.dim < 0) throw ConfigError("data.files.dim", "must be >= 0 (0 infers)");
  }
}

const char* task_name(Task t) { return t == Task::classification ? "classification" : "regression"; }

const char* aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::darn: return "darn";
    case Aggregator::uniform: return "uniform";
    case Aggregator::softmax: return "softmax";
    default: return "onehot";
  }
}

json resolve(const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  json j;
  j["task"] = task_name(t.task);
  j["aggregator"] = aggregator_name(t.aggregator);
  j["tau"] = t.tau;
  j["softmax_gamma"] = t.softmax_gamma;
  j["gradient_path"] = t.gradient_path == GradientPath::jacobian ? "jacobian" : "envelope";
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["dropout"] = t.dropout;
  j["seed"] = t.seed;
  j["nu_tol"] = t.nu_tol;
  j["disc_power_iters"] = t.disc_power_iters;
  j["disc_power_tol"] = t.disc_power_tol;
  j["optimizer"] = {
      {"kind", t.optimizer.kind == OptKind::sgd_momentum ? "sgd_momentum" : "adadelta"},
      {"learning_rate", t.optimizer.learning_rate},
      {"momentum", t.optimizer.momentum},
      {"rho", t.optimizer.rho},
      {"epsilon", t.optimizer.epsilon},
  };
  j["model"] = {
      {"feature_layers", t.feature_layers},
      {"label_hidden", t.label_hidden},
      {"domain_hidden", t.domain_hidden},
      {"num_classes", t.num_classes},
  };
  json d;
  if (rc.data.from_files) {
    d["files"] = {
        {"sources", rc.data.source_paths},
        {"target_train", rc.data.target_train_path},
        {"target_eval", rc.data.target_eval_path},
        {"dim", rc.data.dim},
    };
  } else {
    d["generator"] = "rotated_gaussians";
    d["k"] = rc.data.k;
    d["m"] = rc.data.m;
    d["angles_deg"] = rc.data.angles_deg;
    d["noise"] = rc.data.noise;
    d["seed"] = rc.data.seed;
    if (rc.data.flip_domain >= 0)
      d["flip"] = {{"domain", rc.data.flip_domain}, {"fraction", rc.data.flip_fraction}};
  }
  j["data"] = d;
  j["output_dir"] = rc.output_dir;
  return j;
}

}  // namespace

RunConfig load_run_config(const std::string& path, const std::string& out_override) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!root.is_object()) throw ConfigError("", "top level must be an object");

  RunConfig rc;
  reject_unknown(root, "",
                 {"task", "aggregator", "tau", "softmax_gamma", "gradient_path", "epochs",
                  "batch_size", "dropout", "seed", "nu_tol", "disc_power_iters", "disc_power_tol",
                  "optimizer", "model", "data", "output_dir"});
  TrainConfig& t = rc.train;
  if (root.contains("task"))
    t.task = as_choice<Task>(root["task"], "task",
                             {{"classification", Task::classification},
                              {"regression", Task::regression}});
  if (root.contains("aggregator"))
    t.aggregator = as_choice<Aggregator>(root["aggregator"], "aggregator",
                                         {{"darn", Aggregator::darn},
                                          {"uniform", Aggregator::uniform},
                                          {"softmax", Aggregator::softmax},
                                          {"onehot", Aggregator::onehot}});
  if (root.contains("tau")) t.tau = as_number(root["tau"], "tau");
  if (root.contains("softmax_gamma")) t.softmax_gamma = as_number(root["softmax_gamma"], "softmax_gamma");
  if (root.contains("gradient_path"))
    t.gradient_path = as_choice<GradientPath>(root["gradient_path"], "gradient_path",
                                              {{"jacobian", GradientPath::jacobian},
                                               {"envelope", GradientPath::envelope}});
  if (root.contains("epochs")) t.epochs = as_int(root["epochs"], "epochs");
  if (root.contains("batch_size")) t.batch_size = as_int(root["batch_size"], "batch_size");
  if (root.contains("dropout")) t.dropout = as_number(root["dropout"], "dropout");
  if (root.contains("seed")) t.seed = as_seed(root["seed"], "seed");
  if (root.contains("nu_tol")) t.nu_tol = as_number(root["nu_tol"], "nu_tol");
  if (root.contains("disc_power_iters"))
    t.disc_power_iters = as_int(root["disc_power_iters"], "disc_power_iters");
  if (root.contains("disc_power_tol"))
    t.disc_power_tol = as_number(root["disc_power_tol"], "disc_power_tol");
  if (root.contains("optimizer")) parse_optimizer(as_object(root["optimizer"], "optimizer"), t.optimizer);
  if (root.contains("model")) parse_model(as_object(root["model"], "model"), t);
  if (!root.contains("data")) throw ConfigError("data", "required");
  parse_data(as_object(root["data"], "data"), rc.data);
  if (root.contains("output_dir")) {
    rc.output_dir = as_string(root["output_dir"], "output_dir");
    if (rc.output_dir.empty()) throw ConfigError("output_dir", "must be non-empty");
  }
  if (!out_override.empty()) rc.output_dir = out_override;

  t.validate();
  rc.resolved = resolve(rc);
  return rc;
}

MultiDomainDataset build_dataset(const DataSpec& spec) {
  if (!spec.from_files) {
    MultiDomainDataset data =
        gen_rotated_gaussians(spec.k, spec.m, spec.angles_deg, spec.noise, spec.seed);
    if (spec.flip_domain >= 0)
      data.sources[spec.flip_domain] =
          flip_labels(data.sources[spec.flip_domain], spec.flip_fraction,
                      derive_seed(spec.seed, kStreamFlip, spec.flip_domain));
    return data;
  }

  MultiDomainDataset data;
  for (const std::string& p : spec.source_paths) {
    DomainDataset d = load_sparse_text(p, spec.dim);
    d.name = std::filesystem::path(p).stem().string();
    data.sources.push_back(std::move(d));
  }
  data.target_train = load_sparse_text(spec.target_train_path, spec.dim);
  data.target_train.name = std::filesystem::path(spec.target_train_path).stem().string();
  data.target_train.labels.resize(0);  // targets train unlabelled; any labels in the file are ignored
  data.target_train.labelled = false;
  data.target_eval = load_sparse_text(spec.target_eval_path, spec.dim);
  data.target_eval.name = std::filesystem::path(spec.target_eval_path).stem().string();
  if (spec.dim == 0) {
    // inferred dimensions can differ per file; widen everything to the max
    int dim = 0;
    for (const DomainDataset& d : data.sources) dim = std::max(dim, d.features.dim);
    dim = std::max({dim, data.target_train.features.dim, data.target_eval.features.dim});
    for (DomainDataset& d : data.sources) d.features.dim = dim;
    data.target_train.features.dim = dim;
    data.target_eval.features.dim = dim;
  }
  return data;
}

}  // namespace darn
