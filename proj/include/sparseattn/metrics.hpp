// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparseattn/sparse_attention.hpp"
#include "sparseattn/tensor.hpp"

namespace sparseattn {

struct SparsityMeasurement {
  std::vector<double> per_head;  // pooled over the batch
  double overall = 0.0;
  std::size_t kept = 0;
  std::size_t selectable = 0;
};

// Fraction of selectable (valid x valid) entries that were dropped.
SparsityMeasurement measure_sparsity(const SparseMaskSpec& spec);
// Same, counted from post-softmax weights: an entry is dropped iff its weight is exactly 0.
SparsityMeasurement measure_sparsity(const Tensor& weights, const ValidityMask& valid);

struct EntropyStats {
  std::vector<double> rows;      // one per valid (b, h, i), in that order
  std::vector<double> per_head;  // mean row entropy per head
  double mean = 0.0;
};

// Shannon entropy in nats of one probability row, with 0 ln 0 = 0.
double row_entropy(std::span<const double> row);

// Entropy of each valid query row over valid keys. Throws InvariantError if
// a valid row does not sum to 1 within 1e-6.
EntropyStats attention_entropy(const Tensor& weights, const ValidityMask& valid);

// Per-layer / per-head aggregates over any number of forward passes.
struct AttentionStats {
  std::vector<double> layer_sparsity;
  std::vector<std::vector<double>> head_sparsity;  // [layer][head]
  std::vector<double> layer_entropy;
  std::vector<std::vector<double>> head_entropy;   // [layer][head]
  double mean_sparsity = 0.0;
  double mean_entropy = 0.0;
  std::string entropy_base = "e";
};

class AttentionStatsAccumulator {
 public:
  void add(const std::vector<AttentionOutput>& layers, const ValidityMask& valid);
  AttentionStats result() const;
  bool empty() const { return layers_.empty(); }

 private:
  struct Counts {
    std::vector<std::size_t> kept, selectable;  // per head
    std::vector<double> entropy_sum;            // per head
    std::vector<std::size_t> rows;              // per head
  };
  std::vector<Counts> layers_;
};

struct CorrelationResult {
  double r = 0.0;
  std::size_t points = 0;
};

// Sample Pearson coefficient. Throws DataError on length mismatch or fewer than
// two points, CorrelationError when either input has zero variance.
CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys);

// FLOPs for one attention sublayer at 2 FLOPs per multiply-add, excluding
// softmax, layer norm and bias terms.
struct FlopsRow {
  std::string config;
  double attention_sparsity = 0.0;
  double dense_attention_flops = 0.0;   // QK^T and weights*V: 4 n^2 d
  double sparse_attention_flops = 0.0;  // (1 - s) 4 n^2 d
  double projection_flops = 0.0;        // Q, K, V, output: 8 n d^2
  double attention_reduction_pct = 0.0;
  double total_reduction_pct = 0.0;     // over projections + attention matmuls
  double ffn_flops = 0.0;               // extension: 4 n d d_ff
  double total_with_ffn_reduction_pct = 0.0;
};

struct FlopsReport {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t ff_dim = 0;
  std::vector<FlopsRow> rows;
};

// configs: (name, attention sparsity). ff_dim defaults to 4d.
FlopsReport flops_report(std::size_t n, std::size_t d, const std::vector<std::pair<std::string, double>>& configs,
                         std::size_t ff_dim = 0);

// The four experiment configs with their mean attention sparsity.
std::vector<std::pair<std::string, double>> experiment_flops_configs();

}  // namespace sparseattn
