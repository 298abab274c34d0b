#include "darn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "darn/errors.hpp"
#include "json.hpp"

namespace darn {
namespace {

constexpr std::uint64_t kStreamTaskForward = 0xE1;
constexpr std::uint64_t kStreamTargetForward = 0xE2;
constexpr std::uint64_t kStreamHeadForward = 0xE3;
constexpr std::uint64_t kStreamDisc = 0xE4;
constexpr std::uint64_t kStreamEpoch = 0xE5;
constexpr std::uint64_t kStreamStep = 0xE6;
constexpr double kEmaDecay = 0.9;

std::string domain_label(const std::vector<std::string>* names, int i) {
  if (names != nullptr && i < static_cast<int>(names->size())) return (*names)[i];
  return "domain " + std::to_string(i);
}

void check_finite(double v, const char* what, const std::string& dom) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(what) + " became non-finite for " + dom);
  }
}

void append_g17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void check_positive_widths(const std::vector<int>& widths, const char* field) {
  for (int w : widths) {
    if (w < 1) throw ConfigError(field, "layer widths must be >= 1");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau", "must be > 0");
  if (!(softmax_gamma > 0.0)) throw ConfigError("softmax_gamma", "must be > 0");
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (task == Task::classification && num_classes < 2) {
    throw ConfigError("model.num_classes", "must be >= 2 for classification");
  }
  if (feature_layers.empty()) throw ConfigError("model.feature_layers", "must be non-empty");
  check_positive_widths(feature_layers, "model.feature_layers");
  check_positive_widths(label_hidden, "model.label_hidden");
  check_positive_widths(domain_hidden, "model.domain_hidden");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate", "must be > 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
    throw ConfigError("optimizer.momentum", "must lie in [0, 1)");
  }
  if (!(optimizer.rho > 0.0 && optimizer.rho < 1.0)) {
    throw ConfigError("optimizer.rho", "must lie in (0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("optimizer.epsilon", "must be > 0");
  if (!(nu_tol > 0.0)) throw ConfigError("nu_tol", "must be > 0");
  if (disc_power_iters < 1) throw ConfigError("disc_power_iters", "must be >= 1");
  if (!(disc_power_tol > 0.0)) throw ConfigError("disc_power_tol", "must be > 0");
}

Eigen::VectorXd compute_g(const Eigen::VectorXd& task_losses, const Eigen::VectorXd& discs) {
  if (task_losses.size() != discs.size()) {
    throw std::invalid_argument("compute_g: per-domain vectors differ in length");
  }
  return task_losses + discs;
}

AggregateResult aggregate(const Eigen::VectorXd& g, const TrainConfig& config) {
  const Eigen::Index k = g.size();
  if (k < 1) throw std::invalid_argument("aggregate: empty objective vector");
  AggregateResult out;
  switch (config.aggregator) {
    case Aggregator::darn: {
      const Eigen::VectorXd z = -g / config.tau;
      out.projection = darn_project(z, config.nu_tol);
      out.weights = out.projection.weights;
      if (config.gradient_path == GradientPath::jacobian) {
        // full derivative of <g, alpha(g)> + tau*||alpha(g)||_2; the correction
        // term vanishes at the exact projection, making this the envelope value
        const Eigen::VectorXd w = z - out.weights.alpha / out.weights.alpha.norm();
        out.alpha_bar = out.weights.alpha + darn_jvp(z, out.projection, w);
      } else {
        out.alpha_bar = out.weights.alpha;
      }
      break;
    }
    case Aggregator::uniform: {
      out.weights.alpha = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
      for (Eigen::Index i = 0; i < k; ++i) out.weights.support.push_back(static_cast<int>(i));
      out.alpha_bar = out.weights.alpha;
      break;
    }
    case Aggregator::softmax: {
      out.weights.alpha = softmax(-config.softmax_gamma * g);
      for (Eigen::Index i = 0; i < k; ++i) out.weights.support.push_back(static_cast<int>(i));
      out.alpha_bar = out.weights.alpha;
      break;
    }
    case Aggregator::onehot: {
      Eigen::Index best = 0;
      g.minCoeff(&best);  // first index wins ties
      out.weights.alpha = Eigen::VectorXd::Zero(k);
      out.weights.alpha[best] = 1.0;
      out.weights.support.push_back(static_cast<int>(best));
      out.alpha_bar = out.weights.alpha;
      break;
    }
  }
  out.objective = aggregate_objective(g, out.weights.alpha, config.tau);
  return out;
}

StepMetrics train_step(ModelParams& params, OptimizerState& opt,
                       const std::vector<Batch>& source_batches, const Batch& target_batch,
                       const TrainConfig& config, std::uint64_t step_seed,
                       const std::vector<std::string>* domain_names) {
  const int k = static_cast<int>(source_batches.size());
  if (k < 1) throw std::invalid_argument("train_step: need at least one source batch");
  if (static_cast<int>(params.domain_heads.size()) != k) {
    throw std::invalid_argument("train_step: model was built for a different domain count");
  }
  if (target_batch.rows() < 1) throw std::invalid_argument("train_step: empty target batch");

  StepMetrics m;
  m.task_losses.resize(k);
  m.discs.resize(k);

  // task path: one labelled forward per source
  std::vector<ForwardCache> task_caches(static_cast<std::size_t>(k));
  std::vector<Eigen::MatrixXd> d_task_logits(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const Batch& sb = source_batches[static_cast<std::size_t>(i)];
    if (sb.labels.size() != sb.rows()) {
      throw std::invalid_argument("train_step: source batch " + std::to_string(i) + " lacks labels");
    }
    task_caches[i] = forward(params, sb, Mode::train, derive_seed(step_seed, kStreamTaskForward, i));
    double loss = 0.0;
    if (config.task == Task::classification) {
      loss = cross_entropy_loss(task_caches[i].logits, sb.labels, &d_task_logits[i]);
    } else {
      loss = squared_loss(task_caches[i].logits, sb.labels, &d_task_logits[i]);
    }
    check_finite(loss, "task loss", domain_label(domain_names, i));
    m.task_losses[i] = loss;
  }

  // target features feed every domain head
  MlpCache target_cache;
  Rng target_rng(derive_seed(step_seed, kStreamTargetForward));
  const Eigen::MatrixXd target_features =
      mlp_forward(params.feature_extractor, target_batch, config.dropout, Mode::train,
                  target_rng, &target_cache);

  // per-domain discrepancy estimates
  std::vector<MlpCache> head_caches(static_cast<std::size_t>(k));
  std::vector<Eigen::VectorXd> d_eps_logits(static_cast<std::size_t>(k));
  std::vector<char> disc_active(static_cast<std::size_t>(k), 0);
  if (config.task == Task::classification) {
    for (int i = 0; i < k; ++i) {
      const Eigen::MatrixXd& src_feat = task_caches[i].features;
      Eigen::MatrixXd joint(src_feat.rows() + target_features.rows(), src_feat.cols());
      joint.topRows(src_feat.rows()) = src_feat;
      joint.bottomRows(target_features.rows()) = target_features;
      Rng head_rng(derive_seed(step_seed, kStreamHeadForward, i));
      const Eigen::MatrixXd logits =
          mlp_forward(params.domain_heads[i], grad_reversal_forward(joint), config.dropout,
                      Mode::train, head_rng, &head_caches[i]);
      std::vector<bool> is_target(static_cast<std::size_t>(joint.rows()), false);
      for (Eigen::Index r = src_feat.rows(); r < joint.rows(); ++r) {
        is_target[static_cast<std::size_t>(r)] = true;
      }
      const double eps = logistic_loss(logits.col(0), is_target, &d_eps_logits[i]);
      check_finite(eps, "domain classifier loss", domain_label(domain_names, i));
      m.discs[i] = disc_classification(eps);
      disc_active[i] = m.discs[i] > 0.0 ? 1 : 0;
    }
  } else {
    const Eigen::MatrixXd target_moment = second_moment(target_features);
    for (int i = 0; i < k; ++i) {
      m.discs[i] = disc_regression(target_moment, second_moment(task_caches[i].features),
                                   config.disc_power_iters, config.disc_power_tol,
                                   derive_seed(step_seed, kStreamDisc, i));
      check_finite(m.discs[i], "discrepancy estimate", domain_label(domain_names, i));
    }
  }

  m.g = compute_g(m.task_losses, m.discs);
  const AggregateResult agg = aggregate(m.g, config);
  m.alpha = agg.weights.alpha;
  m.alpha_bar = agg.alpha_bar;
  m.objective = agg.objective;
  check_finite(m.objective, "aggregate objective", "the weighting step");

  // weighted backward: the label path and (via the reversal) the adversarial
  // feature path; domain heads always descend their own classifier loss
  ModelGrads total = zeros_like(params);
  Eigen::MatrixXd d_target_features =
      Eigen::MatrixXd::Zero(target_features.rows(), target_features.cols());
  for (int i = 0; i < k; ++i) {
    const double abar = m.alpha_bar[i];
    Eigen::MatrixXd d_feat = mlp_backward(params.label_head, task_caches[i].label,
                                          abar * d_task_logits[i], total.label, true);
    if (config.task == Task::classification) {
      const Eigen::MatrixXd d_head_out = (2.0 * abar) * d_eps_logits[i];
      const Eigen::MatrixXd d_joint =
          mlp_backward(params.domain_heads[i], head_caches[i], d_head_out, total.domain[i], true);
      if (disc_active[i] != 0) {
        const Eigen::MatrixXd d_rev = grad_reversal_backward(d_joint);
        d_feat += d_rev.topRows(d_feat.rows());
        d_target_features += d_rev.bottomRows(d_target_features.rows());
      }
    }
    mlp_backward(params.feature_extractor, task_caches[i].feature, d_feat, total.feature, false);
  }
  if (config.task == Task::classification) {
    mlp_backward(params.feature_extractor, target_cache, d_target_features, total.feature, false);
  }
  optimizer_step(opt, params, total);
  return m;
}

double evaluate(const ModelParams& params, const DomainDataset& dataset, Task task) {
  if (!dataset.labelled) throw std::invalid_argument("evaluate: dataset must be labelled");
  if (dataset.rows() < 1) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<int> rows(static_cast<std::size_t>(dataset.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  const Batch b = gather(dataset, rows);
  const ForwardCache fc = forward(params, b, Mode::eval, 0);
  if (task == Task::classification) {
    int correct = 0;
    for (Eigen::Index r = 0; r < fc.logits.rows(); ++r) {
      Eigen::Index best = 0;
      fc.logits.row(r).maxCoeff(&best);  // first index wins ties
      correct += static_cast<double>(best) == b.labels[r] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(fc.logits.rows());
  }
  return squared_loss(fc.logits, b.labels, nullptr);
}

TrainResult train(const MultiDomainDataset& data, const TrainConfig& config) {
  config.validate();
  const int k = data.k();
  if (k < 1) throw std::invalid_argument("train: need at least one source domain");
  const int dim = data.feature_dim();
  for (const auto& s : data.sources) {
    if (!s.labelled) throw std::invalid_argument("train: source '" + s.name + "' is unlabelled");
    if (s.rows() < 1) throw std::invalid_argument("train: source '" + s.name + "' is empty");
    if (s.features.dim != dim) {
      throw std::invalid_argument("train: source '" + s.name + "' feature dimension differs");
    }
  }
  if (data.target_train.rows() < 1) throw std::invalid_argument("train: no target training rows");
  if (!data.target_eval.labelled || data.target_eval.rows() < 1) {
    throw std::invalid_argument("train: labelled target evaluation rows are required");
  }
  if (data.target_eval.features.dim != dim) {
    throw std::invalid_argument("train: target evaluation feature dimension differs");
  }

  Architecture arch;
  arch.input_dim = dim;
  arch.feature_layers = config.feature_layers;
  arch.label_hidden = config.label_hidden;
  arch.label_outputs = config.task == Task::classification ? config.num_classes : 1;
  arch.domain_hidden = config.domain_hidden;
  arch.num_domains = k;
  arch.dropout = config.dropout;

  TrainResult result;
  result.params = init_model(arch, config.seed);
  OptimizerState opt = OptimizerState::create(result.params, config.optimizer);
  result.log.task = config.task;
  for (const auto& s : data.sources) result.log.domain_names.push_back(s.name);

  Eigen::VectorXd ema;
  bool ema_started = false;
  std::uint64_t step_counter = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::vector<std::vector<int>>> src_batches(static_cast<std::size_t>(k));
    std::size_t steps = 0;
    for (int i = 0; i < k; ++i) {
      src_batches[i] = batch_iter(data.sources[i], config.batch_size,
                                  derive_seed(config.seed, kStreamEpoch, epoch, i));
      steps = std::max(steps, src_batches[i].size());
    }
    const auto tgt_batches = batch_iter(data.target_train, config.batch_size,
                                        derive_seed(config.seed, kStreamEpoch, epoch, k));

    Eigen::VectorXd loss_sum = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd disc_sum = Eigen::VectorXd::Zero(k);
    double objective_sum = 0.0;
    StepMetrics last;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<Batch> sb;
      sb.reserve(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) {
        sb.push_back(gather(data.sources[i], src_batches[i][s % src_batches[i].size()]));
      }
      const Batch tb = gather(data.target_train, tgt_batches[s % tgt_batches.size()]);
      last = train_step(result.params, opt, sb, tb, config,
                        derive_seed(config.seed, kStreamStep, ++step_counter),
                        &result.log.domain_names);
      loss_sum += last.task_losses;
      disc_sum += last.discs;
      objective_sum += last.objective;
      if (!ema_started) {
        ema = last.alpha;
        ema_started = true;
      } else {
        ema = kEmaDecay * ema + (1.0 - kEmaDecay) * last.alpha;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.alpha = last.alpha;
    rec.alpha_ema = ema;
    rec.task_loss = loss_sum / static_cast<double>(steps);
    rec.disc = disc_sum / static_cast<double>(steps);
    rec.objective = objective_sum / static_cast<double>(steps);
    rec.eval_metric = evaluate(result.params, data.target_eval, config.task);
    result.log.epochs.push_back(std::move(rec));
  }
  result.log.final_eval = result.log.epochs.back().eval_metric;
  return result;
}

void write_trainlog_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  std::string buf = "epoch,domain,alpha,alpha_ema,task_loss,disc\n";
  for (const auto& rec : log.epochs) {
    for (std::size_t i = 0; i < log.domain_names.size(); ++i) {
      buf += std::to_string(rec.epoch);
      buf += ',';
      buf += log.domain_names[i];
      buf += ',';
      append_g17(buf, rec.alpha[static_cast<Eigen::Index>(i)]);
      buf += ',';
      append_g17(buf, rec.alpha_ema[static_cast<Eigen::Index>(i)]);
      buf += ',';
      append_g17(buf, rec.task_loss[static_cast<Eigen::Index>(i)]);
      buf += ',';
      append_g17(buf, rec.disc[static_cast<Eigen::Index>(i)]);
      buf += '\n';
    }
  }
  out << buf;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path);
}

void write_eval_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  std::string buf = "epoch,eval_metric\n";
  for (const auto& rec : log.epochs) {
    buf += std::to_string(rec.epoch);
    buf += ',';
    append_g17(buf, rec.eval_metric);
    buf += '\n';
  }
  out << buf;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path);
}

void write_summary_json(const std::string& path, const TrainLog& log,
                        const std::string& config_echo_json) {
  nlohmann::json j;
  j["task"] = log.task == Task::classification ? "classification" : "regression";
  j["domains"] = log.domain_names;
  j["epochs_run"] = log.epochs.size();
  j["final"]["eval_metric"] = log.final_eval;
  if (!log.epochs.empty()) {
    const auto& last = log.epochs.back();
    j["final"]["alpha"] =
        std::vector<double>(last.alpha.data(), last.alpha.data() + last.alpha.size());
    j["final"]["alpha_ema"] =
        std::vector<double>(last.alpha_ema.data(), last.alpha_ema.data() + last.alpha_ema.size());
    j["final"]["objective"] = last.objective;
  }
  const nlohmann::json echo = nlohmann::json::parse(config_echo_json, nullptr, false);
  j["config"] = echo.is_discarded() ? nlohmann::json::object() : echo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace darn
