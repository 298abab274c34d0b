#include "darn/nn.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "darn/errors.hpp"
#include "darn/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace darn;

namespace {

Batch dense_batch(darn::Rng& rng, int b, int d) {
  Batch x;
  x.dense.resize(b, d);
  for (int r = 0; r < b; ++r) {
    for (int c = 0; c < d; ++c) x.dense(r, c) = rng.normal();
  }
  x.dim = d;
  return x;
}

Eigen::VectorXd random_labels(darn::Rng& rng, int b, int classes) {
  Eigen::VectorXd y(b);
  for (int i = 0; i < b; ++i) y[i] = static_cast<double>(rng.uniform_int(classes));
  return y;
}

// Scalar training loss as a pure function of the parameters, for FD checks.
double model_loss(const ModelParams& params, const Batch& x, const Eigen::VectorXd& y,
                  Mode mode, std::uint64_t seed) {
  const ForwardCache cache = forward(params, x, mode, seed);
  return cross_entropy_loss(cache.logits, y, nullptr);
}

// Max relative error between analytic grads and central differences over
// every parameter of the model.
double max_rel_grad_error(ModelParams& params, const Batch& x, const Eigen::VectorXd& y,
                          Mode mode, std::uint64_t seed) {
  const ForwardCache cache = forward(params, x, mode, seed);
  Eigen::MatrixXd d_logits;
  cross_entropy_loss(cache.logits, y, &d_logits);
  ModelGrads grads = backward(params, cache, d_logits);

  auto pv = param_views(params);
  auto gv = grad_views(grads);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t blk = 0; blk < pv.size(); ++blk) {
    for (Eigen::Index i = 0; i < pv[blk].size(); ++i) {
      const double saved = pv[blk][i];
      pv[blk][i] = saved + h;
      const double up = model_loss(params, x, y, mode, seed);
      pv[blk][i] = saved - h;
      const double dn = model_loss(params, x, y, mode, seed);
      pv[blk][i] = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double denom = std::max({std::abs(fd), std::abs(gv[blk][i]), 1e-6});
      worst = std::max(worst, std::abs(fd - gv[blk][i]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("glorot init: bounded, biases zero, reproducible") {
  Architecture arch;
  arch.input_dim = 10;
  arch.feature_layers = {8, 6};
  arch.label_hidden = {5};
  arch.label_outputs = 3;
  arch.domain_hidden = {4};
  arch.num_domains = 2;
  const ModelParams a = init_model(arch, 42);
  const ModelParams b = init_model(arch, 42);
  const ModelParams c = init_model(arch, 43);

  const auto va = param_views(a), vb = param_views(b), vc = param_views(c);
  REQUIRE(va.size() == vb.size());
  bool all_equal_ab = true, any_diff_ac = false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if ((va[i] - vb[i]).cwiseAbs().maxCoeff() != 0.0) all_equal_ab = false;
    if ((va[i] - vc[i]).cwiseAbs().maxCoeff() != 0.0) any_diff_ac = true;
  }
  CHECK(all_equal_ab);
  CHECK(any_diff_ac);

  const double limit0 = std::sqrt(6.0 / (10 + 8));
  CHECK(a.feature_extractor.layers[0].weight.cwiseAbs().maxCoeff() <= limit0);
  CHECK(a.feature_extractor.layers[0].weight.cwiseAbs().maxCoeff() > 0.5 * limit0);
  CHECK(a.feature_extractor.layers[0].bias.cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.label_head.layers.back().bias.cwiseAbs().maxCoeff() == 0.0);

  CHECK(param_count(a) == (10 * 8 + 8) + (8 * 6 + 6) + (6 * 5 + 5) + (5 * 3 + 3) +
                              2 * ((6 * 4 + 4) + (4 * 1 + 1)));
}

TEST_CASE("zero-weight model maps every input to zero logits") {
  Architecture arch;
  arch.input_dim = 4;
  arch.feature_layers = {3};
  arch.label_outputs = 2;
  const ModelParams p = make_model(arch);
  darn::Rng rng(5);
  const Batch x = dense_batch(rng, 6, 4);
  const ForwardCache cache = forward(p, x, Mode::eval, 0);
  CHECK(cache.logits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches finite differences (dense, eval mode)") {
  Architecture arch;
  arch.input_dim = 3;
  arch.feature_layers = {4};
  arch.label_hidden = {4};
  arch.label_outputs = 2;
  ModelParams p = init_model(arch, 7);
  darn::Rng rng(8);
  const Batch x = dense_batch(rng, 5, 3);
  const Eigen::VectorXd y = random_labels(rng, 5, 2);
  CHECK(max_rel_grad_error(p, x, y, Mode::eval, 0) < 1e-4);
}

TEST_CASE("backward matches finite differences with dropout active") {
  Architecture arch;
  arch.input_dim = 3;
  arch.feature_layers = {6};
  arch.label_outputs = 2;
  arch.dropout = 0.3;
  ModelParams p = init_model(arch, 11);
  darn::Rng rng(12);
  const Batch x = dense_batch(rng, 4, 3);
  const Eigen::VectorXd y = random_labels(rng, 4, 2);
  // fixed seed => fixed masks => the loss is a deterministic function of
  // the parameters and finite differences are valid
  CHECK(max_rel_grad_error(p, x, y, Mode::train, 99) < 1e-4);
}

TEST_CASE("sparse and dense first layers agree in eval mode") {
  Architecture arch;
  arch.input_dim = 6;
  arch.feature_layers = {5};
  arch.label_outputs = 2;
  const ModelParams p = init_model(arch, 21);

  Batch sparse;
  sparse.sparse = true;
  sparse.dim = 6;
  sparse.sparse_rows = {
      {{0, 1.5}, {3, -2.0}},
      {{1, 0.5}, {2, 1.0}, {5, -1.0}},
      {},
      {{4, 3.0}},
  };
  Batch dense;
  dense.dim = 6;
  dense.dense = Eigen::MatrixXd::Zero(4, 6);
  for (int r = 0; r < 4; ++r) {
    for (const auto& [idx, val] : sparse.sparse_rows[r]) dense.dense(r, idx) = val;
  }
  const ForwardCache a = forward(p, sparse, Mode::eval, 0);
  const ForwardCache b = forward(p, dense, Mode::eval, 0);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("sparse first-layer gradients match finite differences") {
  Architecture arch;
  arch.input_dim = 6;
  arch.feature_layers = {4};
  arch.label_outputs = 2;
  ModelParams p = init_model(arch, 31);
  Batch x;
  x.sparse = true;
  x.dim = 6;
  x.sparse_rows = {
      {{0, 1.0}, {2, -1.5}},
      {{1, 2.0}, {4, 0.5}, {5, 1.0}},
      {{3, -0.75}},
  };
  Eigen::VectorXd y(3);
  y << 0, 1, 0;
  CHECK(max_rel_grad_error(p, x, y, Mode::eval, 0) < 1e-4);
}

TEST_CASE("dropout semantics") {
  Architecture arch;
  arch.input_dim = 50;
  arch.feature_layers = {40};
  arch.label_outputs = 2;
  arch.dropout = 0.4;
  const ModelParams p = init_model(arch, 51);
  darn::Rng rng(52);
  const Batch x = dense_batch(rng, 30, 50);

  // eval mode ignores dropout entirely
  const ForwardCache e1 = forward(p, x, Mode::eval, 1);
  const ForwardCache e2 = forward(p, x, Mode::eval, 2);
  CHECK((e1.logits - e2.logits).cwiseAbs().maxCoeff() == 0.0);

  // train mode: same seed same masks, different seed different masks
  const ForwardCache t1 = forward(p, x, Mode::train, 9);
  const ForwardCache t2 = forward(p, x, Mode::train, 9);
  const ForwardCache t3 = forward(p, x, Mode::train, 10);
  CHECK((t1.logits - t2.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t1.logits - t3.logits).cwiseAbs().maxCoeff() > 0.0);

  // inverted scaling: surviving entries of the masked input are x/(1-p),
  // and the empirical keep rate approaches 1-p
  const auto& mask = t1.feature.masks[0];
  REQUIRE(mask.size() > 0);
  int kept = 0;
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      const double m = mask(r, c);
      CHECK((m == 0.0 || m == doctest::Approx(1.0 / 0.6).epsilon(1e-12)));
      if (m != 0.0) ++kept;
    }
  }
  const double rate = static_cast<double>(kept) / static_cast<double>(mask.size());
  CHECK(rate == doctest::Approx(0.6).epsilon(0.05));
}

TEST_CASE("loss hand values") {
  // softmax CE at zero logits is log(C)
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(4, 3);
  Eigen::VectorXd y(4);
  y << 0, 1, 2, 0;
  CHECK(cross_entropy_loss(logits, y) == doctest::Approx(std::log(3.0)).epsilon(1e-14));

  // logistic loss at zero logits is log 2; at logit log(1/3) with a positive
  // label it is log 4 (the classifier assigns the true class probability 1/4)
  Eigen::VectorXd l0 = Eigen::VectorXd::Zero(2);
  CHECK(logistic_loss(l0, {true, false}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  Eigen::VectorXd l1(1);
  l1 << std::log(1.0 / 3.0);
  CHECK(logistic_loss(l1, {true}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  // overflow-safe at extreme logits
  Eigen::VectorXd big(2);
  big << 1000.0, -1000.0;
  const double v = logistic_loss(big, {false, true});
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1000.0).epsilon(1e-12));

  Eigen::MatrixXd pred(2, 1);
  pred << 1.0, -1.0;
  Eigen::VectorXd t(2);
  t << 0.0, 0.0;
  CHECK(squared_loss(pred, t) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("loss gradients match finite differences") {
  darn::Rng rng(61);
  // cross entropy
  {
    Eigen::MatrixXd logits(5, 3);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c) logits(r, c) = rng.normal();
    const Eigen::VectorXd y = random_labels(rng, 5, 3);
    Eigen::MatrixXd d;
    cross_entropy_loss(logits, y, &d);
    const double h = 1e-6;
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 3; ++c) {
        Eigen::MatrixXd lp = logits, lm = logits;
        lp(r, c) += h;
        lm(r, c) -= h;
        const double fd = (cross_entropy_loss(lp, y) - cross_entropy_loss(lm, y)) / (2 * h);
        CHECK(d(r, c) == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
  // logistic
  {
    Eigen::VectorXd logits(6);
    std::vector<bool> pos;
    for (int i = 0; i < 6; ++i) {
      logits[i] = rng.normal();
      pos.push_back(rng.uniform() < 0.5);
    }
    Eigen::VectorXd d;
    logistic_loss(logits, pos, &d);
    const double h = 1e-6;
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd lp = logits, lm = logits;
      lp[i] += h;
      lm[i] -= h;
      const double fd = (logistic_loss(lp, pos) - logistic_loss(lm, pos)) / (2 * h);
      CHECK(d[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  // squared
  {
    Eigen::MatrixXd pred(4, 1);
    Eigen::VectorXd t(4);
    for (int i = 0; i < 4; ++i) {
      pred(i, 0) = rng.normal();
      t[i] = rng.normal();
    }
    Eigen::MatrixXd d;
    squared_loss(pred, t, &d);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      Eigen::MatrixXd pp = pred, pm = pred;
      pp(i, 0) += h;
      pm(i, 0) -= h;
      const double fd = (squared_loss(pp, t) - squared_loss(pm, t)) / (2 * h);
      CHECK(d(i, 0) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("gradient reversal") {
  Eigen::MatrixXd x(2, 2);
  x << 1.0, -2.0, 3.0, 4.0;
  CHECK((grad_reversal_forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((grad_reversal_backward(x) + x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sgd with momentum follows the classic recurrence") {
  Architecture arch;
  arch.input_dim = 1;
  arch.feature_layers = {1};
  arch.label_outputs = 1;
  ModelParams p = make_model(arch);  // all zeros
  OptimizerConfig cfg;
  cfg.kind = OptKind::sgd_momentum;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  OptimizerState st = OptimizerState::create(p, cfg);

  ModelGrads g = zeros_like(p);
  g.feature[0].weight(0, 0) = 1.0;
  optimizer_step(st, p, g);
  CHECK(p.feature_extractor.layers[0].weight(0, 0) == doctest::Approx(-0.1).epsilon(1e-15));
  optimizer_step(st, p, g);
  // v = 0.9*1 + 1 = 1.9, theta = -0.1 - 0.19 = -0.29
  CHECK(p.feature_extractor.layers[0].weight(0, 0) == doctest::Approx(-0.29).epsilon(1e-15));
}

TEST_CASE("adadelta drives a quadratic toward its minimum") {
  // minimize (w - 1)^2 for the single weight w, grad = 2(w - 1)
  Architecture arch;
  arch.input_dim = 1;
  arch.feature_layers = {1};
  arch.label_outputs = 1;
  ModelParams p = make_model(arch);
  OptimizerConfig cfg;
  cfg.kind = OptKind::adadelta;
  cfg.learning_rate = 1.0;
  cfg.rho = 0.95;
  cfg.epsilon = 1e-6;
  OptimizerState st = OptimizerState::create(p, cfg);

  auto w = [&]() { return p.feature_extractor.layers[0].weight(0, 0); };
  ModelGrads g = zeros_like(p);
  // first-step magnitude: sqrt(eps)/sqrt(0.05*g^2+eps)*g with g = -2
  g.feature[0].weight(0, 0) = 2.0 * (w() - 1.0);
  optimizer_step(st, p, g);
  const double expect0 = std::sqrt(1e-6) / std::sqrt(0.05 * 4.0 + 1e-6) * 2.0;
  CHECK(w() == doctest::Approx(expect0).epsilon(1e-10));

  for (int i = 0; i < 2000; ++i) {
    g.feature[0].weight(0, 0) = 2.0 * (w() - 1.0);
    optimizer_step(st, p, g);
  }
  CHECK(std::abs(w() - 1.0) < 1e-2);
}

TEST_CASE("checkpoint round-trip is exact") {
  Architecture arch;
  arch.input_dim = 7;
  arch.feature_layers = {5, 4};
  arch.label_hidden = {3};
  arch.label_outputs = 2;
  arch.domain_hidden = {3};
  arch.num_domains = 3;
  arch.dropout = 0.25;
  const ModelParams p = init_model(arch, 1234);
  CheckpointMeta meta;
  meta.seed = 1234;
  meta.optimizer = "adadelta";

  const std::string path = (std::filesystem::temp_directory_path() / "darn_ckpt_test.bin").string();
  save_checkpoint(path, p, meta);
  const Checkpoint ck = load_checkpoint(path);

  CHECK(ck.meta.seed == 1234);
  CHECK(ck.meta.optimizer == "adadelta");
  CHECK(ck.params.arch.dropout == 0.25);
  CHECK(ck.params.arch.num_domains == 3);
  const auto va = param_views(p), vb = param_views(ck.params);
  REQUIRE(va.size() == vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    CHECK((va[i] - vb[i]).cwiseAbs().maxCoeff() == 0.0);  // bit-exact
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects garbage and truncation") {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string bad = (dir / "darn_ckpt_bad.bin").string();
  {
    std::ofstream out(bad);
    out << "not json at all\n";
  }
  CHECK_THROWS_AS((void)load_checkpoint(bad), darn::ParseError);

  Architecture arch;
  arch.input_dim = 3;
  arch.feature_layers = {2};
  arch.label_outputs = 2;
  const ModelParams p = init_model(arch, 9);
  const std::string full = (dir / "darn_ckpt_full.bin").string();
  save_checkpoint(full, p, {});
  // truncate the last 8 bytes
  std::error_code ec;
  const auto size = std::filesystem::file_size(full, ec);
  std::filesystem::resize_file(full, size - 8, ec);
  CHECK_THROWS_AS((void)load_checkpoint(full), std::runtime_error);
  std::filesystem::remove(bad);
  std::filesystem::remove(full);
}
