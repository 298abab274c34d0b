#include "darn/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "darn/errors.hpp"
#include "json.hpp"

namespace darn {
namespace {

constexpr std::uint64_t kStreamInit = 0xA1;
constexpr std::uint64_t kStreamFeatureDropout = 0xB1;
constexpr std::uint64_t kStreamLabelDropout = 0xB2;

void validate_arch(const Architecture& a) {
  if (a.input_dim < 1) throw std::invalid_argument("architecture: input_dim must be >= 1");
  if (a.feature_layers.empty()) {
    throw std::invalid_argument("architecture: feature_layers must be non-empty");
  }
  for (int w : a.feature_layers) {
    if (w < 1) throw std::invalid_argument("architecture: feature layer width must be >= 1");
  }
  for (int w : a.label_hidden) {
    if (w < 1) throw std::invalid_argument("architecture: label hidden width must be >= 1");
  }
  for (int w : a.domain_hidden) {
    if (w < 1) throw std::invalid_argument("architecture: domain hidden width must be >= 1");
  }
  if (a.label_outputs < 1) throw std::invalid_argument("architecture: label_outputs must be >= 1");
  if (a.num_domains < 1) throw std::invalid_argument("architecture: num_domains must be >= 1");
  if (!(a.dropout >= 0.0 && a.dropout < 1.0)) {
    throw std::invalid_argument("architecture: dropout must lie in [0, 1)");
  }
}

Mlp make_mlp(int in, const std::vector<int>& widths, bool relu_after_last) {
  Mlp mlp;
  mlp.relu_after_last = relu_after_last;
  int fan_in = in;
  for (int w : widths) {
    LinearLayer layer;
    layer.weight = Eigen::MatrixXd::Zero(fan_in, w);
    layer.bias = Eigen::VectorXd::Zero(w);
    mlp.layers.push_back(std::move(layer));
    fan_in = w;
  }
  return mlp;
}

void glorot_fill(Mlp& mlp, Rng& rng) {
  for (auto& layer : mlp.layers) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    double* p = layer.weight.data();
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) p[i] = rng.uniform(-limit, limit);
    layer.bias.setZero();
  }
}

MlpGrads zero_grads_for(const Mlp& mlp) {
  MlpGrads g;
  for (const auto& layer : mlp.layers) {
    LinearLayer zero;
    zero.weight = Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols());
    zero.bias = Eigen::VectorXd::Zero(layer.bias.size());
    g.push_back(std::move(zero));
  }
  return g;
}

// One forward implementation for both entry points; sb carries an optional
// sparse batch consumed by layer 0, dx a dense input matrix.
Eigen::MatrixXd run_forward(const Mlp& mlp, const Batch* sb, const Eigen::MatrixXd* dx,
                            double dropout, Mode mode, Rng& rng, MlpCache* cache) {
  const bool drop = (mode == Mode::train && dropout > 0.0);
  const double keep = 1.0 - dropout;
  const int depth = static_cast<int>(mlp.layers.size());
  Eigen::MatrixXd act;
  for (int l = 0; l < depth; ++l) {
    const auto& layer = mlp.layers[l];
    Eigen::MatrixXd pre;
    if (l == 0 && sb != nullptr && sb->sparse) {
      const int b = sb->rows();
      pre = Eigen::MatrixXd::Zero(b, layer.weight.cols());
      std::vector<SparseRow> eff(static_cast<std::size_t>(b));
      for (int r = 0; r < b; ++r) {
        SparseRow row = sb->sparse_rows[static_cast<std::size_t>(r)];
        if (drop) {
          SparseRow kept;
          for (const auto& [idx, val] : row) {
            if (rng.uniform() >= dropout) kept.emplace_back(idx, val / keep);
          }
          row = std::move(kept);
        }
        for (const auto& [idx, val] : row) pre.row(r) += val * layer.weight.row(idx);
        eff[static_cast<std::size_t>(r)] = std::move(row);
      }
      pre.rowwise() += layer.bias.transpose();
      if (cache != nullptr) {
        cache->sparse_input = true;
        cache->sparse_inputs = std::move(eff);
        cache->inputs.emplace_back();              // keep layer indexing aligned
        if (drop) cache->masks.emplace_back();
      }
    } else {
      Eigen::MatrixXd in;
      if (l == 0) {
        in = (sb != nullptr) ? sb->dense : *dx;
      } else {
        in = std::move(act);
      }
      Eigen::MatrixXd mask;
      if (drop) {
        mask.resize(in.rows(), in.cols());
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
          for (Eigen::Index c = 0; c < in.cols(); ++c) {
            mask(r, c) = (rng.uniform() >= dropout) ? 1.0 / keep : 0.0;
          }
        }
        in = in.cwiseProduct(mask);
      }
      pre.noalias() = in * layer.weight;
      pre.rowwise() += layer.bias.transpose();
      if (cache != nullptr) {
        cache->inputs.push_back(std::move(in));
        if (drop) cache->masks.push_back(std::move(mask));
      }
    }
    if (cache != nullptr) cache->preacts.push_back(pre);
    const bool relu = (l + 1 < depth) || mlp.relu_after_last;
    if (relu) {
      act = pre.cwiseMax(0.0);
    } else {
      act = std::move(pre);
    }
  }
  if (cache != nullptr) cache->output = act;
  return act;
}

void write_f64_le(std::ofstream& out, const double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &data[i], sizeof(double));
      for (std::size_t j = 0; j < sizeof(double) / 2; ++j) {
        std::swap(bytes[j], bytes[sizeof(double) - 1 - j]);
      }
      out.write(reinterpret_cast<const char*>(bytes), sizeof(double));
    }
  }
}

void read_f64_le(std::ifstream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double)) {
    throw std::runtime_error("checkpoint: truncated parameter block");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &data[i], sizeof(double));
      for (std::size_t j = 0; j < sizeof(double) / 2; ++j) {
        std::swap(bytes[j], bytes[sizeof(double) - 1 - j]);
      }
      std::memcpy(&data[i], bytes, sizeof(double));
    }
  }
}

}  // namespace

ModelParams make_model(const Architecture& arch) {
  validate_arch(arch);
  ModelParams p;
  p.arch = arch;
  p.feature_extractor = make_mlp(arch.input_dim, arch.feature_layers, /*relu_after_last=*/true);
  const int feat_dim = arch.feature_layers.back();
  std::vector<int> label_widths = arch.label_hidden;
  label_widths.push_back(arch.label_outputs);
  p.label_head = make_mlp(feat_dim, label_widths, /*relu_after_last=*/false);
  std::vector<int> domain_widths = arch.domain_hidden;
  domain_widths.push_back(1);
  for (int d = 0; d < arch.num_domains; ++d) {
    p.domain_heads.push_back(make_mlp(feat_dim, domain_widths, /*relu_after_last=*/false));
  }
  return p;
}

ModelParams init_model(const Architecture& arch, std::uint64_t seed) {
  ModelParams p = make_model(arch);
  Rng rng(derive_seed(seed, kStreamInit));
  glorot_fill(p.feature_extractor, rng);
  glorot_fill(p.label_head, rng);
  for (auto& head : p.domain_heads) glorot_fill(head, rng);
  return p;
}

ModelGrads zeros_like(const ModelParams& params) {
  ModelGrads g;
  g.feature = zero_grads_for(params.feature_extractor);
  g.label = zero_grads_for(params.label_head);
  for (const auto& head : params.domain_heads) g.domain.push_back(zero_grads_for(head));
  return g;
}

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Batch& x, double dropout, Mode mode,
                            Rng& rng, MlpCache* cache) {
  return run_forward(mlp, &x, nullptr, dropout, mode, rng, cache);
}

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& x, double dropout,
                            Mode mode, Rng& rng, MlpCache* cache) {
  return run_forward(mlp, nullptr, &x, dropout, mode, rng, cache);
}

Eigen::MatrixXd mlp_backward(const Mlp& mlp, const MlpCache& cache,
                             const Eigen::MatrixXd& d_output, MlpGrads& grads,
                             bool need_input_grad) {
  const int depth = static_cast<int>(mlp.layers.size());
  const bool drop = !cache.masks.empty();
  Eigen::MatrixXd d_act = d_output;
  for (int l = depth - 1; l >= 0; --l) {
    const bool relu = (l + 1 < depth) || mlp.relu_after_last;
    Eigen::MatrixXd d_pre;
    if (relu) {
      d_pre = d_act.cwiseProduct((cache.preacts[l].array() > 0.0).cast<double>().matrix());
    } else {
      d_pre = std::move(d_act);
    }
    grads[l].bias += d_pre.colwise().sum().transpose();
    if (l == 0 && cache.sparse_input) {
      for (std::size_t r = 0; r < cache.sparse_inputs.size(); ++r) {
        for (const auto& [idx, val] : cache.sparse_inputs[r]) {
          grads[0].weight.row(idx) += val * d_pre.row(static_cast<Eigen::Index>(r));
        }
      }
      return {};  // gradients never flow past the data
    }
    grads[l].weight.noalias() += cache.inputs[l].transpose() * d_pre;
    if (l == 0 && !need_input_grad) return {};
    Eigen::MatrixXd d_in = d_pre * mlp.layers[l].weight.transpose();
    if (drop && cache.masks[l].size() > 0) d_in = d_in.cwiseProduct(cache.masks[l]);
    if (l == 0) return d_in;
    d_act = std::move(d_in);
  }
  return {};
}

ForwardCache forward(const ModelParams& params, const Batch& x, Mode mode,
                     std::uint64_t seed) {
  ForwardCache cache;
  Rng rng_feat(derive_seed(seed, kStreamFeatureDropout));
  Rng rng_label(derive_seed(seed, kStreamLabelDropout));
  cache.features = mlp_forward(params.feature_extractor, x, params.arch.dropout, mode,
                               rng_feat, &cache.feature);
  cache.logits = mlp_forward(params.label_head, cache.features, params.arch.dropout, mode,
                             rng_label, &cache.label);
  return cache;
}

ModelGrads backward(const ModelParams& params, const ForwardCache& cache,
                    const Eigen::MatrixXd& d_logits) {
  ModelGrads g = zeros_like(params);
  const Eigen::MatrixXd d_feat =
      mlp_backward(params.label_head, cache.label, d_logits, g.label, true);
  mlp_backward(params.feature_extractor, cache.feature, d_feat, g.feature, false);
  return g;
}

double cross_entropy_loss(const Eigen::MatrixXd& logits, const Eigen::VectorXd& labels,
                          Eigen::MatrixXd* d_logits) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index classes = logits.cols();
  if (labels.size() != b) throw std::invalid_argument("cross_entropy_loss: label count mismatch");
  if (d_logits != nullptr) *d_logits = Eigen::MatrixXd::Zero(b, classes);
  double total = 0.0;
  for (Eigen::Index r = 0; r < b; ++r) {
    const double m = logits.row(r).maxCoeff();
    double se = 0.0;
    for (Eigen::Index c = 0; c < classes; ++c) se += std::exp(logits(r, c) - m);
    const auto y = static_cast<Eigen::Index>(labels[r]);
    if (y < 0 || y >= classes) throw std::invalid_argument("cross_entropy_loss: label out of range");
    total += m + std::log(se) - logits(r, y);
    if (d_logits != nullptr) {
      for (Eigen::Index c = 0; c < classes; ++c) {
        (*d_logits)(r, c) = std::exp(logits(r, c) - m) / se / static_cast<double>(b);
      }
      (*d_logits)(r, y) -= 1.0 / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

double logistic_loss(const Eigen::VectorXd& logits, const std::vector<bool>& positive,
                     Eigen::VectorXd* d_logits) {
  const Eigen::Index b = logits.size();
  if (static_cast<Eigen::Index>(positive.size()) != b) {
    throw std::invalid_argument("logistic_loss: label count mismatch");
  }
  if (d_logits != nullptr) *d_logits = Eigen::VectorXd::Zero(b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double x = logits[i];
    const double y = positive[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    if (d_logits != nullptr) {
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
      (*d_logits)[i] = (s - y) / static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

double squared_loss(const Eigen::MatrixXd& pred, const Eigen::VectorXd& targets,
                    Eigen::MatrixXd* d_pred) {
  if (pred.cols() != 1) throw std::invalid_argument("squared_loss: expected a single output column");
  const Eigen::Index b = pred.rows();
  if (targets.size() != b) throw std::invalid_argument("squared_loss: target count mismatch");
  const Eigen::VectorXd diff = pred.col(0) - targets;
  if (d_pred != nullptr) {
    *d_pred = Eigen::MatrixXd::Zero(b, 1);
    d_pred->col(0) = 2.0 * diff / static_cast<double>(b);
  }
  return diff.squaredNorm() / static_cast<double>(b);
}

OptimizerState OptimizerState::create(const ModelParams& params, const OptimizerConfig& config) {
  OptimizerState s;
  s.config = config;
  s.accum_a = zeros_like(params);
  if (config.kind == OptKind::adadelta) s.accum_b = zeros_like(params);
  return s;
}

void optimizer_step(OptimizerState& state, ModelParams& params, const ModelGrads& grads) {
  auto pv = param_views(params);
  auto gv = grad_views(grads);
  auto av = grad_views(state.accum_a);
  const OptimizerConfig& c = state.config;
  if (c.kind == OptKind::sgd_momentum) {
    for (std::size_t i = 0; i < pv.size(); ++i) {
      av[i] = c.momentum * av[i] + gv[i];
      pv[i] -= c.learning_rate * av[i];
    }
  } else {
    auto bv = grad_views(state.accum_b);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      av[i].array() = c.rho * av[i].array() + (1.0 - c.rho) * gv[i].array().square();
      const Eigen::ArrayXd delta = -((bv[i].array() + c.epsilon).sqrt() /
                                     (av[i].array() + c.epsilon).sqrt()) *
                                   gv[i].array();
      pv[i].array() += c.learning_rate * delta;
      bv[i].array() = c.rho * bv[i].array() + (1.0 - c.rho) * delta.square();
    }
  }
}

namespace {
template <class MapT, class LayerVec>
void push_layer_views(std::vector<MapT>& out, LayerVec& layers) {
  for (auto& l : layers) {
    out.emplace_back(l.weight.data(), l.weight.size());
    out.emplace_back(l.bias.data(), l.bias.size());
  }
}
}  // namespace

std::vector<Eigen::Map<Eigen::VectorXd>> param_views(ModelParams& params) {
  std::vector<Eigen::Map<Eigen::VectorXd>> v;
  push_layer_views(v, params.feature_extractor.layers);
  push_layer_views(v, params.label_head.layers);
  for (auto& head : params.domain_heads) push_layer_views(v, head.layers);
  return v;
}

std::vector<Eigen::Map<const Eigen::VectorXd>> param_views(const ModelParams& params) {
  std::vector<Eigen::Map<const Eigen::VectorXd>> v;
  push_layer_views(v, params.feature_extractor.layers);
  push_layer_views(v, params.label_head.layers);
  for (const auto& head : params.domain_heads) push_layer_views(v, head.layers);
  return v;
}

std::vector<Eigen::Map<Eigen::VectorXd>> grad_views(ModelGrads& grads) {
  std::vector<Eigen::Map<Eigen::VectorXd>> v;
  push_layer_views(v, grads.feature);
  push_layer_views(v, grads.label);
  for (auto& head : grads.domain) push_layer_views(v, head);
  return v;
}

std::vector<Eigen::Map<const Eigen::VectorXd>> grad_views(const ModelGrads& grads) {
  std::vector<Eigen::Map<const Eigen::VectorXd>> v;
  push_layer_views(v, grads.feature);
  push_layer_views(v, grads.label);
  for (const auto& head : grads.domain) push_layer_views(v, head);
  return v;
}

long param_count(const ModelParams& params) {
  long n = 0;
  for (const auto& view : param_views(params)) n += static_cast<long>(view.size());
  return n;
}

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const CheckpointMeta& meta) {
  nlohmann::json header;
  header["magic"] = "darn-checkpoint";
  header["version"] = 1;
  header["arch"] = {
      {"input_dim", params.arch.input_dim},
      {"feature_layers", params.arch.feature_layers},
      {"label_hidden", params.arch.label_hidden},
      {"label_outputs", params.arch.label_outputs},
      {"domain_hidden", params.arch.domain_hidden},
      {"num_domains", params.arch.num_domains},
      {"dropout", params.arch.dropout},
  };
  header["seed"] = meta.seed;
  header["optimizer"] = meta.optimizer;
  const auto views = param_views(params);
  header["blocks"] = views.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << header.dump() << '\n';
  for (const auto& view : views) {
    write_f64_le(out, view.data(), static_cast<std::size_t>(view.size()));
  }
  out.flush();
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  std::getline(in, line);
  const nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded()) throw ParseError("checkpoint header is not valid JSON", 1);
  if (header.value("magic", std::string{}) != "darn-checkpoint") {
    throw ParseError("not a checkpoint file (bad magic)", 1);
  }
  if (header.value("version", 0) != 1) throw ParseError("unsupported checkpoint version", 1);
  Architecture arch;
  try {
    const auto& a = header.at("arch");
    arch.input_dim = a.at("input_dim").get<int>();
    arch.feature_layers = a.at("feature_layers").get<std::vector<int>>();
    arch.label_hidden = a.at("label_hidden").get<std::vector<int>>();
    arch.label_outputs = a.at("label_outputs").get<int>();
    arch.domain_hidden = a.at("domain_hidden").get<std::vector<int>>();
    arch.num_domains = a.at("num_domains").get<int>();
    arch.dropout = a.at("dropout").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 1);
  }
  Checkpoint ck;
  ck.params = make_model(arch);
  ck.meta.seed = header.value("seed", std::uint64_t{0});
  ck.meta.optimizer = header.value("optimizer", std::string{});
  auto views = param_views(ck.params);
  if (header.value("blocks", std::size_t{0}) != views.size()) {
    throw ParseError("checkpoint block count does not match the architecture", 1);
  }
  for (auto& view : views) {
    read_f64_le(in, view.data(), static_cast<std::size_t>(view.size()));
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw std::runtime_error("checkpoint: trailing bytes after parameter blocks");
  }
  return ck;
}

}  // namespace darn
