#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "darn/rng.hpp"

namespace darn {

enum class Mode { train, eval };

/// One example row in (index, value) form; indices are 0-based and strictly
/// increasing within a row.
using SparseRow = std::vector<std::pair<int, double>>;

/// Mini-batch of examples: either a dense matrix or sparse rows. Sparse
/// batches stay sparse until the first linear layer consumes them.
struct Batch {
  Eigen::MatrixXd dense;
  std::vector<SparseRow> sparse_rows;
  bool sparse = false;
  int dim = 0;  // column count (needed for sparse rows)
  Eigen::VectorXd labels;  // empty when unlabelled

  int rows() const {
    return sparse ? static_cast<int>(sparse_rows.size()) : static_cast<int>(dense.rows());
  }
};

struct LinearLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::VectorXd bias;    // fan_out
};

/// Linear stack with ReLU between layers — and after the last one when
/// relu_after_last is set (feature extractors keep it, prediction heads
/// end in raw logits). Inverted dropout is applied to every layer input
/// in train mode.
struct Mlp {
  std::vector<LinearLayer> layers;
  bool relu_after_last = false;

  int in_dim() const { return static_cast<int>(layers.front().weight.rows()); }
  int out_dim() const { return static_cast<int>(layers.back().weight.cols()); }
};

struct Architecture {
  int input_dim = 0;
  std::vector<int> feature_layers;  // h_fea widths; last entry is the feature dim
  std::vector<int> label_hidden;    // h_y hidden widths (may be empty)
  int label_outputs = 2;            // class count, or 1 for regression
  std::vector<int> domain_hidden;   // per-head hidden widths (may be empty)
  int num_domains = 1;              // one domain classifier per source
  double dropout = 0.0;
};

/// Shared feature extractor, label predictor, and one domain classifier per
/// source domain.
struct ModelParams {
  Architecture arch;
  Mlp feature_extractor;
  Mlp label_head;
  std::vector<Mlp> domain_heads;
};

using MlpGrads = std::vector<LinearLayer>;

struct ModelGrads {
  MlpGrads feature;
  MlpGrads label;
  std::vector<MlpGrads> domain;
};

/// Zero-initialized parameters of the given shape.
ModelParams make_model(const Architecture& arch);
/// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases,
/// reproducible from the seed.
ModelParams init_model(const Architecture& arch, std::uint64_t seed);
ModelGrads zeros_like(const ModelParams& params);

/// Activations recorded by a forward pass, as needed for backprop.
struct MlpCache {
  std::vector<Eigen::MatrixXd> inputs;    // post-dropout input to each linear
  std::vector<Eigen::MatrixXd> preacts;   // linear outputs before ReLU
  std::vector<Eigen::MatrixXd> masks;     // scaled dropout masks (empty in eval / p=0)
  std::vector<SparseRow> sparse_inputs;   // post-dropout rows when layer 0 ran sparse
  bool sparse_input = false;
  Eigen::MatrixXd output;
};

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Batch& x, double dropout, Mode mode,
                            Rng& rng, MlpCache* cache);
Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x, double dropout,
                            Mode mode, Rng& rng, MlpCache* cache);

/// Backpropagate d_output through the cached pass, accumulating parameter
/// gradients into grads. Returns the gradient w.r.t. the dense input, or an
/// empty matrix when the input was sparse (never needed upstream of data)
/// or need_input_grad is false.
Eigen::MatrixXd mlp_backward(const Mlp& mlp, const MlpCache& cache,
                             const Eigen::MatrixXd& d_output, MlpGrads& grads,
                             bool need_input_grad = true);

/// Label path h_y(h_fea(x)) of the full model.
struct ForwardCache {
  MlpCache feature;
  MlpCache label;
  Eigen::MatrixXd features;
  Eigen::MatrixXd logits;
};

ForwardCache forward(const ModelParams& params, const Batch& x, Mode mode,
                     std::uint64_t seed);
ModelGrads backward(const ModelParams& params, const ForwardCache& cache,
                    const Eigen::MatrixXd& d_logits);

/// Mean softmax cross-entropy over integer labels; optionally writes
/// d(loss)/d(logits).
double cross_entropy_loss(const Eigen::MatrixXd& logits, const Eigen::VectorXd& labels,
                          Eigen::MatrixXd* d_logits = nullptr);
/// Mean binary cross-entropy with logits, computed in the overflow-safe
/// max(x,0) - x*y + log1p(exp(-|x|)) form.
double logistic_loss(const Eigen::VectorXd& logits, const std::vector<bool>& positive,
                     Eigen::VectorXd* d_logits = nullptr);
/// Mean squared error; optionally writes d(loss)/d(pred).
double squared_loss(const Eigen::MatrixXd& pred, const Eigen::VectorXd& targets,
                    Eigen::MatrixXd* d_pred = nullptr);

/// Gradient reversal: identity forward, negated gradient backward.
inline const Eigen::MatrixXd& grad_reversal_forward(const Eigen::MatrixXd& x) { return x; }
inline Eigen::MatrixXd grad_reversal_backward(const Eigen::MatrixXd& upstream) {
  return -upstream;
}

enum class OptKind { sgd_momentum, adadelta };

struct OptimizerConfig {
  OptKind kind = OptKind::sgd_momentum;
  double learning_rate = 0.05;  // 1.0 is the customary adadelta setting
  double momentum = 0.9;        // sgd_momentum
  double rho = 0.95;            // adadelta decay
  double epsilon = 1e-6;        // adadelta conditioner
};

struct OptimizerState {
  OptimizerConfig config;
  ModelGrads accum_a;  // velocity (sgd) or running squared gradient (adadelta)
  ModelGrads accum_b;  // adadelta running squared update

  static OptimizerState create(const ModelParams& params, const OptimizerConfig& config);
};

void optimizer_step(OptimizerState& state, ModelParams& params, const ModelGrads& grads);

/// Flat views over every parameter block in declaration order (feature
/// layers, label layers, domain heads; weight then bias). Matrices are
/// viewed in column-major storage order.
std::vector<Eigen::Map<Eigen::VectorXd>> param_views(ModelParams& params);
std::vector<Eigen::Map<const Eigen::VectorXd>> param_views(const ModelParams& params);
std::vector<Eigen::Map<Eigen::VectorXd>> grad_views(ModelGrads& grads);
std::vector<Eigen::Map<const Eigen::VectorXd>> grad_views(const ModelGrads& grads);
long param_count(const ModelParams& params);

/// Checkpoint format: one JSON header line (architecture, seed, optimizer
/// tag, block count) followed by raw little-endian float64 blocks in
/// param_views order.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string optimizer = "sgd_momentum";
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const CheckpointMeta& meta);

struct Checkpoint {
  ModelParams params;
  CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace darn
