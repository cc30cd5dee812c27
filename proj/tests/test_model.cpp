// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "sparseattn/errors.hpp"
#include "sparseattn/model.hpp"
#include "sparseattn/rng.hpp"
#include "test_support.hpp"

namespace sparseattn {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 1;
  c.model_dim = 4;
  c.ff_dim = 8;
  c.vocab_size = 6;
  c.max_len = 3;
  c.seed = 11;
  return c;
}

// Second sequence is padded so masked rows and columns are exercised.
Batch tiny_batch() {
  return Batch::from_sequences({{2, 3, 4}, {5, 1}}, {1, 0});
}

// Random non-zero biases and gains so every parameter class has a live gradient.
ModelParams perturbed_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = init_params(config, seed);
  Rng rng(seed + 1);
  p.for_each([&](const std::string&, Tensor& t) {
    for (double& v : t.values()) {
      v += rng.uniform(-0.3, 0.3);
    }
  });
  return p;
}

double loss_of(const ModelParams& p, const ModelConfig& c, const AttentionPlan& plan, const Batch& batch) {
  return cross_entropy_loss(model_forward(batch, p, c, plan).logits, batch.labels).loss;
}

TEST(ModelInit, DeterministicInSeed) {
  const ModelConfig c;
  const ModelParams a = init_params(c, 3);
  const ModelParams b = init_params(c, 3);
  std::vector<const Tensor*> ta, tb;
  a.for_each([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
  b.for_each([&](const std::string&, const Tensor& t) { tb.push_back(&t); });
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(max_abs_diff(*ta[i], *tb[i]), 0.0);
  }
}

TEST(ModelInit, GainsOneBiasesZeroWeightsBounded) {
  const ModelConfig c;
  const ModelParams p = init_params(c, 1);
  for (const LayerParams& l : p.layers) {
    for (double g : l.ln1_gain.values()) EXPECT_EQ(g, 1.0);
    for (double g : l.ln2_gain.values()) EXPECT_EQ(g, 1.0);
    for (const Tensor* b : {&l.bq, &l.bk, &l.bv, &l.bo, &l.ln1_bias, &l.ln2_bias, &l.ff1_b, &l.ff2_b}) {
      for (double v : b->values()) EXPECT_EQ(v, 0.0);
    }
    const double bound = std::sqrt(6.0 / (32.0 + 64.0));
    for (double v : l.ff1_w.values()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(ModelInit, ParameterCountMatchesClosedForm) {
  const ModelConfig c;  // L=2 h=2 d=32 d_ff=64 vocab=1000 max_len=64
  const std::size_t d = 32, f = 64, V = 1000, n = 64, L = 2, C = 2;
  const std::size_t per_layer = 4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d);
  const std::size_t expected = V * d + n * d + L * per_layer + d * C + C;
  EXPECT_EQ(init_params(c, 7).parameter_count(), expected);
  EXPECT_EQ(expected, 51202u);
}

TEST(ModelInit, InvalidConfigRejected) {
  ModelConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Loss, UniformLogitsGiveLn2) {
  const Tensor logits({2, 2}, 0.0);
  const std::vector<int> labels{0, 1};
  EXPECT_NEAR(cross_entropy_loss(logits, labels).loss, std::log(2.0), 1e-15);
}

TEST(Loss, SaturatedLogitsStable) {
  const Tensor logits({1, 2}, std::vector<double>{1000.0, -1000.0});
  const std::vector<int> label0{0}, label1{1};
  const LossResult ok = cross_entropy_loss(logits, label0);
  EXPECT_NEAR(ok.loss, 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy_loss(logits, label1).loss, 2000.0, 1e-9);
  EXPECT_TRUE(ok.grad_logits.all_finite());
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor logits({3, 2});
  for (double& v : logits.values()) v = rng.uniform(-2, 2);
  const std::vector<int> labels{0, 1, 1};
  const Tensor g = cross_entropy_loss(logits, labels).grad_logits;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor up = logits, dn = logits;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    const double fd = (cross_entropy_loss(up, labels).loss - cross_entropy_loss(dn, labels).loss) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-6);
  }
}

class WholeModelGradient : public ::testing::TestWithParam<double> {};

TEST_P(WholeModelGradient, AllParameterClassesMatchFiniteDifferences) {
  const ModelConfig c = tiny_config();
  const double s = GetParam();
  SparsityConfig sc{SparsityMode::uniform, s, 0.0, 1};
  if (s == 0.0) sc.mode = SparsityMode::baseline;
  const AttentionPlan plan = make_plan(sc);
  const Batch batch = tiny_batch();
  const ModelParams params = perturbed_params(c, 21);

  ForwardCache cache;
  const ForwardResult fwd = model_forward(batch, params, c, plan, &cache);
  const ModelParams grads = backward(cross_entropy_loss(fwd.logits, batch.labels).grad_logits, cache, params);

  std::vector<const Tensor*> gs;
  grads.for_each([&](const std::string&, const Tensor& t) { gs.push_back(&t); });
  std::size_t idx = 0;
  double worst = 0.0;
  ModelParams probe = params;
  probe.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& g = *gs[idx++];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      auto at = [&](double delta) {
        t[i] = orig + delta;
        return loss_of(probe, c, plan, batch);
      };
      const double h = 1e-4;
      const double fd = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      t[i] = orig;
      const double err = test::relative_error(g[i], fd, 1e-6);
      worst = std::max(worst, err);
      EXPECT_LT(err, 1e-4) << name << "[" << i << "] analytic " << g[i] << " numeric " << fd;
    }
  });
  EXPECT_LT(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Sparsity, WholeModelGradient, ::testing::Values(0.0, 0.5));

TEST(ModelForward, PaddingInvariance) {
  ModelConfig c = tiny_config();
  c.max_len = 6;
  const ModelParams p = perturbed_params(c, 4);
  const AttentionPlan plan = make_plan(SparsityConfig{SparsityMode::uniform, 0.5, 0.0, 1});
  const Batch a = Batch::from_sequences({{2, 3, 4}}, {0});
  const Batch b = Batch::from_sequences({{2, 3, 4}, {1, 2, 3, 4, 5, 2}}, {0, 1});
  const Tensor la = model_forward(a, p, c, plan).logits;
  const Tensor lb = model_forward(b, p, c, plan).logits;
  EXPECT_NEAR(la.at(0, 0), lb.at(0, 0), 1e-12);
  EXPECT_NEAR(la.at(0, 1), lb.at(0, 1), 1e-12);
}

TEST(ModelForward, OutOfRangeTokenRejected) {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c, 1);
  const Batch bad = Batch::from_sequences({{2, 9}}, {0});
  EXPECT_THROW(model_forward(bad, p, c, dense_plan(1)), DataError);
  const Batch too_long = Batch::from_sequences({{2, 2, 2, 2}}, {0});
  EXPECT_THROW(model_forward(too_long, p, c, dense_plan(1)), DataError);
}

TEST(ModelForward, BaselineAndAggressiveDifferInSupportOnly) {
  ModelConfig c;
  c.vocab_size = 50;
  c.max_len = 12;
  const ModelParams p = init_params(c, 2);
  const Batch batch = Batch::from_sequences({{2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, {4, 5, 6, 7}}, {0, 1});
  const ForwardResult dense = model_forward(batch, p, c, make_plan(experiment_configs(2).at("baseline")));
  const ForwardResult sparse = model_forward(batch, p, c, make_plan(experiment_configs(2).at("aggressive_sparse")));
  ASSERT_EQ(dense.attention.size(), sparse.attention.size());
  for (std::size_t l = 0; l < dense.attention.size(); ++l) {
    EXPECT_EQ(dense.attention[l].weights.shape(), sparse.attention[l].weights.shape());
    EXPECT_LT(sparse.attention[l].mask.total_kept(), dense.attention[l].mask.total_kept());
    EXPECT_EQ(dense.attention[l].mask.total_kept(), dense.attention[l].mask.total_selectable());
  }
  EXPECT_EQ(dense.logits.shape(), (std::vector<std::size_t>{2, 2}));
}

TEST(ModelBackward, MissingCacheIsStateError) {
  const ModelConfig c = tiny_config();
  const ModelParams p = init_params(c, 1);
  EXPECT_THROW(backward(Tensor({1, 2}), ForwardCache{}, p), StateError);
}

TEST(EncoderLayer, ZeroSublayerWeightsGiveIdentity) {
  ModelConfig c = tiny_config();
  ModelParams p = perturbed_params(c, 8);
  LayerParams& l = p.layers[0];
  l.wo.fill(0.0);
  l.bo.fill(0.0);
  l.ff2_w.fill(0.0);
  l.ff2_b.fill(0.0);
  Rng rng(2);
  Tensor x({2, 3, 4});
  for (double& v : x.values()) v = rng.uniform(-1, 1);
  const ValidityMask valid(2, 3);
  const LayerOutput out = encoder_layer_forward(x, l, 1, 0.5, SelectionPool::per_head, valid);
  EXPECT_EQ(max_abs_diff(out.output, x), 0.0);
}

TEST(EncoderLayer, SingleTokenAttentionIsOne) {
  ModelConfig c = tiny_config();
  const ModelParams p = perturbed_params(c, 9);
  Tensor x({1, 1, 4}, 0.5);
  for (double s : {0.0, 0.5, 0.9}) {
    const LayerOutput out = encoder_layer_forward(x, p.layers[0], 1, s, SelectionPool::per_head, ValidityMask(1, 1));
    EXPECT_DOUBLE_EQ(out.attention.weights[0], 1.0);
  }
}

}  // namespace
}  // namespace sparseattn
