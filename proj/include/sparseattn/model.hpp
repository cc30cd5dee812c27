// SPDX-License-Identifier: Apache-2.0
//
// Small pre-norm transformer encoder classifier with hand-written backward.
//
//   x0 = token_embedding[ids] + position_embedding[pos]
//   for each layer:  x = x + MHSA(LN1(x));  x = x + W2 gelu(W1 LN2(x))
//   logits = classifier(mean of x over valid positions)
//
// Linear weights are stored (in, out), so y = x W + b.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sparseattn/sparse_attention.hpp"
#include "sparseattn/sparsity_schedule.hpp"
#include "sparseattn/tensor.hpp"

namespace sparseattn {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t model_dim = 32;
  std::size_t ff_dim = 64;
  std::size_t vocab_size = 1000;
  std::size_t max_len = 64;
  std::size_t num_classes = 2;
  std::uint64_t seed = 7;

  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const;

  // DistilBERT-sized shape (6 layers, 12 heads, 768 wide).
  static ModelConfig distilbert_preset();
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ModelParams {
  Tensor token_embedding;     // (vocab_size, model_dim)
  Tensor position_embedding;  // (max_len, model_dim)
  std::vector<LayerParams> layers;
  Tensor classifier_w;  // (model_dim, num_classes)
  Tensor classifier_b;  // (num_classes)

  // Visits every tensor in a fixed order with a stable dotted name.
  template <class Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::size_t parameter_count() const;
  bool all_finite() const;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("token_embedding"), self.token_embedding);
    fn(std::string("position_embedding"), self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& p = self.layers[l];
      const std::string pre = "layers." + std::to_string(l) + ".";
      fn(pre + "attn.wq", p.wq);
      fn(pre + "attn.bq", p.bq);
      fn(pre + "attn.wk", p.wk);
      fn(pre + "attn.bk", p.bk);
      fn(pre + "attn.wv", p.wv);
      fn(pre + "attn.bv", p.bv);
      fn(pre + "attn.wo", p.wo);
      fn(pre + "attn.bo", p.bo);
      fn(pre + "ln1.gain", p.ln1_gain);
      fn(pre + "ln1.bias", p.ln1_bias);
      fn(pre + "ln2.gain", p.ln2_gain);
      fn(pre + "ln2.bias", p.ln2_bias);
      fn(pre + "ffn.w1", p.ff1_w);
      fn(pre + "ffn.b1", p.ff1_b);
      fn(pre + "ffn.w2", p.ff2_w);
      fn(pre + "ffn.b2", p.ff2_b);
    }
    fn(std::string("classifier.weight"), self.classifier_w);
    fn(std::string("classifier.bias"), self.classifier_b);
  }
};

// All-zero tensors shaped like the model described by config.
ModelParams zero_params(const ModelConfig& config);
ModelParams zeros_like(const ModelParams& params);

// Weights ~ U(-b, b) with b = sqrt(6 / (fan_in + fan_out)); biases 0,
// layer-norm gains 1. Deterministic in seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// A padded batch of token ids; pad id 0 at invalid positions.
struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;  // (size, seq_len)
  ValidityMask valid;
  std::vector<int> labels;

  static Batch from_sequences(const std::vector<std::vector<std::int32_t>>& sequences,
                              const std::vector<int>& labels);
};

struct LayerCache {
  Tensor input;     // (rows, d)
  Tensor ln1_xhat;  // (rows, d)
  std::vector<double> ln1_rstd;
  Tensor ln1_out;
  AttentionState attention;
  Tensor concat;  // merged heads (rows, d)
  Tensor mid;     // input + attention sublayer
  Tensor ln2_xhat;
  std::vector<double> ln2_rstd;
  Tensor ln2_out;
  Tensor ff_pre;  // (rows, d_ff)
  Tensor ff_act;
};

struct ForwardCache {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
  std::vector<std::int32_t> tokens;
  ValidityMask valid;
  std::vector<LayerCache> layers;
  Tensor pooled;  // (batch, d)

  bool ready() const { return !layers.empty() && !pooled.empty(); }
};

struct LayerOutput {
  Tensor output;  // (batch, seq_len, d)
  AttentionOutput attention;
};

// Pre-norm residual block. x is (batch, seq_len, model_dim).
LayerOutput encoder_layer_forward(const Tensor& x, const LayerParams& params, std::size_t heads, double sparsity,
                                  SelectionPool pool, const ValidityMask& valid, LayerCache* cache = nullptr);

struct ForwardResult {
  Tensor logits;  // (batch, num_classes)
  std::vector<AttentionOutput> attention;  // per layer
};

ForwardResult model_forward(const Batch& batch, const ModelParams& params, const ModelConfig& config,
                            const AttentionPlan& plan, ForwardCache* cache = nullptr);

struct LossResult {
  double loss = 0.0;    // mean over the batch
  Tensor grad_logits;   // d loss / d logits
};

LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

// Reverse-mode gradients of the loss whose logit gradient is grad_logits.
ModelParams backward(const Tensor& grad_logits, const ForwardCache& cache, const ModelParams& params);

}  // namespace sparseattn
