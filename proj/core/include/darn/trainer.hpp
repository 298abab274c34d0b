#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "darn/data.hpp"
#include "darn/discrepancy.hpp"
#include "darn/nn.hpp"
#include "darn/simplex.hpp"

namespace darn {

enum class Task { classification, regression };
enum class Aggregator { darn, uniform, softmax, onehot };
enum class GradientPath { jacobian, envelope };

struct TrainConfig {
  Task task = Task::classification;
  Aggregator aggregator = Aggregator::darn;
  double tau = 1.0;           // weighting temperature
  double softmax_gamma = 1.0; // inverse temperature of the softmax baseline
  GradientPath gradient_path = GradientPath::jacobian;
  int epochs = 30;
  int batch_size = 20;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;
  std::vector<int> feature_layers = {16};
  std::vector<int> label_hidden = {};
  std::vector<int> domain_hidden = {8};
  int num_classes = 2;
  double nu_tol = 1e-12;      // projection tolerance (loosen only to study failure)
  int disc_power_iters = 20;  // regression discrepancy estimation
  double disc_power_tol = 1e-7;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Per-domain objective g = task_loss + disc.
Eigen::VectorXd compute_g(const Eigen::VectorXd& task_losses, const Eigen::VectorXd& discs);

/// Domain weights for one step under the configured aggregator.
struct AggregateResult {
  SimplexWeights weights;       // alpha applied to the losses
  Eigen::VectorXd alpha_bar;    // weights used in the parameter gradient
  ProjectionResult projection;  // populated for the darn aggregator
  double objective = 0.0;       // <g, alpha> + tau*||alpha||_2
};

AggregateResult aggregate(const Eigen::VectorXd& g, const TrainConfig& config);

struct StepMetrics {
  Eigen::VectorXd task_losses;
  Eigen::VectorXd discs;
  Eigen::VectorXd g;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;
  double objective = 0.0;
};

/// One optimization step over one mini-batch per source plus a target
/// mini-batch: forward everything, estimate per-domain discrepancies,
/// reweight, and descend. Updates params and optimizer state in place.
/// Throws DivergenceError (naming the domain) on non-finite losses.
StepMetrics train_step(ModelParams& params, OptimizerState& opt,
                       const std::vector<Batch>& source_batches, const Batch& target_batch,
                       const TrainConfig& config, std::uint64_t step_seed,
                       const std::vector<std::string>* domain_names = nullptr);

struct EpochRecord {
  int epoch = 0;  // 1-based
  Eigen::VectorXd alpha;      // last step of the epoch
  Eigen::VectorXd alpha_ema;  // per-step EMA, decay 0.9
  Eigen::VectorXd task_loss;  // means over the epoch's steps
  Eigen::VectorXd disc;
  double objective = 0.0;     // mean over the epoch's steps
  double eval_metric = 0.0;   // target-eval accuracy (classification) or MSE
};

struct TrainLog {
  Task task = Task::classification;
  std::vector<std::string> domain_names;
  std::vector<EpochRecord> epochs;
  double final_eval = 0.0;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// Full training run: per-epoch reshuffles, step count set by the largest
/// source (smaller domains cycle their batches), an evaluation pass per
/// epoch, and EMA-smoothed weight logging.
TrainResult train(const MultiDomainDataset& data, const TrainConfig& config);

/// Classification: accuracy of argmax logits (first index wins ties).
/// Regression: mean squared error.
double evaluate(const ModelParams& params, const DomainDataset& dataset, Task task);

/// trainlog.csv: epoch,domain,alpha,alpha_ema,task_loss,disc (one row per
/// domain per epoch). Floats are written with %.17g, so reruns are
/// byte-identical.
void write_trainlog_csv(const std::string& path, const TrainLog& log);
/// eval.csv: epoch,eval_metric.
void write_eval_csv(const std::string& path, const TrainLog& log);
/// summary.json: final metrics plus an echo of the resolved configuration
/// (pass the configuration as a serialized JSON object).
void write_summary_json(const std::string& path, const TrainLog& log,
                        const std::string& config_echo_json);

}  // namespace darn
