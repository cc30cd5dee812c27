// SPDX-License-Identifier: Apache-2.0
//
// Scaled dot-product attention with pre-softmax top-k sparsification.
//
// For each selection pool the raw scores S = QK^T are ranked, the
// round((1 - s) * m) highest selectable entries are kept, everything else is
// replaced by -inf, and the surviving scores go through softmax(S / sqrt(d_k)).
// Every valid query row keeps at least its own maximum so softmax stays
// defined. Padded keys never enter a pool and padded query rows produce zero
// weights and zero context.
//
// All tensors are row-major doubles:
//   Q, K, V, context : (batch, heads, seq_len, head_dim)
//   scores, weights  : (batch, heads, seq_len, seq_len)
#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "sparseattn/tensor.hpp"

namespace sparseattn {

enum class SelectionPool {
  per_head,         // one pool per (batch item, head) slice
  per_layer_batch,  // one pool across every head and batch item of the layer
};

std::string_view to_string(SelectionPool pool);
SelectionPool parse_selection_pool(std::string_view name);

struct HeadDims {
  std::size_t seq_len = 1;
  std::size_t head_dim = 1;
  std::size_t heads = 1;

  std::size_t model_dim() const { return heads * head_dim; }
  void validate() const;
};

// Real-token flags per (batch, position). Every sequence must have at least
// one valid position.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(std::size_t batch, std::size_t seq_len);  // all valid
  ValidityMask(std::size_t batch, std::size_t seq_len, std::vector<std::uint8_t> flags);
  static ValidityMask from_lengths(std::size_t seq_len, const std::vector<std::size_t>& lengths);

  bool operator()(std::size_t b, std::size_t i) const { return flags_[b * seq_len_ + i] != 0; }
  std::size_t batch() const { return batch_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t valid_count(std::size_t b) const;

 private:
  std::size_t batch_ = 0;
  std::size_t seq_len_ = 0;
  std::vector<std::uint8_t> flags_;
};

struct ScoreTensor {
  Tensor values;  // (batch, heads, seq_len, seq_len)

  std::size_t batch() const { return values.dim(0); }
  std::size_t heads() const { return values.dim(1); }
  std::size_t seq_len() const { return values.dim(2); }
};

struct SparseMaskSpec {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t seq_len = 0;
  double target_sparsity = 0.0;
  SelectionPool pool = SelectionPool::per_head;

  std::vector<std::uint8_t> keep;      // aligned with the score tensor
  std::vector<double> threshold;       // per (b, h): smallest score in the top-k set
  std::vector<std::size_t> keep_count; // per (b, h): realized kept entries
  std::vector<std::size_t> selectable; // per (b, h): valid-query x valid-key pairs
  std::size_t forced_keeps = 0;        // row maxima added by the per-row guarantee

  bool kept(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
    return keep[((b * heads + h) * seq_len + i) * seq_len + j] != 0;
  }
  std::size_t total_kept() const;
  std::size_t total_selectable() const;
  // 1 - kept / selectable over the whole spec.
  double achieved_sparsity() const;
};

struct AttentionOutput {
  Tensor context;  // (batch, heads, seq_len, head_dim)
  Tensor weights;  // (batch, heads, seq_len, seq_len)
  SparseMaskSpec mask;
};

// Everything the backward pass needs from a forward call.
struct AttentionState {
  Tensor q, k, v;
  AttentionOutput output;

  bool ready() const { return !q.empty() && !output.weights.empty(); }
};

struct AttentionGrads {
  Tensor q, k, v;
};

inline constexpr std::size_t kMinKeepPerRow = 1;

// S[b,h,i,j] = sum_c Q[b,h,i,c] K[b,h,j,c], unscaled.
ScoreTensor raw_scores(const Tensor& q, const Tensor& k);

// Number of entries the top-k pass keeps for a pool of m selectable entries.
std::size_t top_k_count(double sparsity, std::size_t selectable);

SparseMaskSpec select_threshold(const ScoreTensor& scores, double sparsity, const ValidityMask& valid,
                                SelectionPool pool);

// Dropped and padded entries become -infinity.
ScoreTensor apply_sparsity_mask(const ScoreTensor& scores, const SparseMaskSpec& spec);

// Row softmax of masked / sqrt(head_dim). -inf entries map to exactly 0;
// padded query rows are all zero.
Tensor sparse_softmax(const ScoreTensor& masked, std::size_t head_dim, const ValidityMask& valid);

AttentionOutput sparse_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, double sparsity,
                                         const ValidityMask& valid, SelectionPool pool);

// Softmax-attention backward restricted to the kept support. The selection is
// a constant of the forward pass; no gradient flows through the top-k choice.
AttentionGrads sparse_attention_backward(const Tensor& grad_context, const AttentionState& state);

}  // namespace sparseattn
