// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/sparse_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_rank4(const Tensor& t, const char* name) {
  if (t.rank() != 4) {
    throw DimensionError(std::string(name) + " must be (batch, heads, seq_len, head_dim), got " +
                         t.shape_string());
  }
}

void require_mask_matches(const ValidityMask& valid, std::size_t batch, std::size_t seq_len) {
  if (valid.batch() != batch || valid.seq_len() != seq_len) {
    throw DimensionError("validity mask is " + std::to_string(valid.batch()) + "x" +
                         std::to_string(valid.seq_len()) + ", expected " + std::to_string(batch) + "x" +
                         std::to_string(seq_len));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    if (valid.valid_count(b) == 0) {
      throw ValidityError("sequence " + std::to_string(b) + " has no valid positions");
    }
  }
}

struct Candidate {
  double score;
  std::size_t index;
};

// Higher score first; equal scores resolve to the lower flat index.
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) {
    return a.score > b.score;
  }
  return a.index < b.index;
}

// Keeps the k best candidates of one pool and returns the smallest kept score.
double keep_top_k(std::vector<Candidate>& pool, std::size_t k, std::vector<std::uint8_t>& keep) {
  if (k == 0 || pool.empty()) {
    return std::numeric_limits<double>::infinity();
  }
  if (k < pool.size()) {
    std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1), pool.end(), ranks_before);
  }
  double smallest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    keep[pool[i].index] = 1;
    smallest = std::min(smallest, pool[i].score);
  }
  return smallest;
}

}  // namespace

std::string_view to_string(SelectionPool pool) {
  switch (pool) {
    case SelectionPool::per_head:
      return "per_head";
    case SelectionPool::per_layer_batch:
      return "per_layer_batch";
  }
  return "unknown";
}

SelectionPool parse_selection_pool(std::string_view name) {
  if (name == "per_head") {
    return SelectionPool::per_head;
  }
  if (name == "per_layer_batch") {
    return SelectionPool::per_layer_batch;
  }
  throw ConfigError("unknown selection pool '" + std::string(name) + "'");
}

void HeadDims::validate() const {
  if (seq_len < 1 || head_dim < 1 || heads < 1) {
    throw DimensionError("head dims must all be >= 1");
  }
}

ValidityMask::ValidityMask(std::size_t batch, std::size_t seq_len)
    : batch_(batch), seq_len_(seq_len), flags_(batch * seq_len, 1) {}

ValidityMask::ValidityMask(std::size_t batch, std::size_t seq_len, std::vector<std::uint8_t> flags)
    : batch_(batch), seq_len_(seq_len), flags_(std::move(flags)) {
  if (flags_.size() != batch * seq_len) {
    throw DimensionError("validity flags: expected " + std::to_string(batch * seq_len) + " entries, got " +
                         std::to_string(flags_.size()));
  }
}

ValidityMask ValidityMask::from_lengths(std::size_t seq_len, const std::vector<std::size_t>& lengths) {
  std::vector<std::uint8_t> flags(lengths.size() * seq_len, 0);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] > seq_len) {
      throw DimensionError("sequence length " + std::to_string(lengths[b]) + " exceeds padded length " +
                           std::to_string(seq_len));
    }
    std::fill_n(flags.begin() + static_cast<std::ptrdiff_t>(b * seq_len), lengths[b], std::uint8_t{1});
  }
  return ValidityMask(lengths.size(), seq_len, std::move(flags));
}

std::size_t ValidityMask::valid_count(std::size_t b) const {
  const auto first = flags_.begin() + static_cast<std::ptrdiff_t>(b * seq_len_);
  return static_cast<std::size_t>(std::count(first, first + static_cast<std::ptrdiff_t>(seq_len_), 1));
}

std::size_t SparseMaskSpec::total_kept() const {
  return std::accumulate(keep_count.begin(), keep_count.end(), std::size_t{0});
}

std::size_t SparseMaskSpec::total_selectable() const {
  return std::accumulate(selectable.begin(), selectable.end(), std::size_t{0});
}

double SparseMaskSpec::achieved_sparsity() const {
  const std::size_t pool = total_selectable();
  if (pool == 0) {
    throw DataError("achieved sparsity of an empty selection pool");
  }
  return 1.0 - static_cast<double>(total_kept()) / static_cast<double>(pool);
}

ScoreTensor raw_scores(const Tensor& q, const Tensor& k) {
  require_rank4(q, "Q");
  require_rank4(k, "K");
  if (!q.same_shape(k)) {
    throw DimensionError("Q " + q.shape_string() + " and K " + k.shape_string() + " differ in shape");
  }
  const std::size_t batch = q.dim(0), heads = q.dim(1), n = q.dim(2), dk = q.dim(3);
  ScoreTensor scores{Tensor({batch, heads, n, n})};
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    const double* qs = q.data() + bh * n * dk;
    const double* ks = k.data() + bh * n * dk;
    double* out = scores.values.data() + bh * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dk; ++c) {
          acc += qs[i * dk + c] * ks[j * dk + c];
        }
        out[i * n + j] = acc;
      }
    }
  }
  return scores;
}

std::size_t top_k_count(double sparsity, std::size_t selectable) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("sparsity ratio must lie in [0, 1), got " + std::to_string(sparsity));
  }
  if (selectable == 0) {
    return 0;
  }
  const auto k = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(selectable)));
  return std::min(selectable, std::max(kMinKeepPerRow, k));
}

SparseMaskSpec select_threshold(const ScoreTensor& scores, double sparsity, const ValidityMask& valid,
                                SelectionPool pool) {
  require_rank4(scores.values, "scores");
  const std::size_t batch = scores.batch(), heads = scores.heads(), n = scores.seq_len();
  if (scores.values.dim(3) != n) {
    throw DimensionError("scores must be square per head, got " + scores.values.shape_string());
  }
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("sparsity ratio must lie in [0, 1), got " + std::to_string(sparsity));
  }
  require_mask_matches(valid, batch, n);
  if (!scores.values.all_finite()) {
    throw InvariantError("attention scores contain non-finite values");
  }

  SparseMaskSpec spec;
  spec.batch = batch;
  spec.heads = heads;
  spec.seq_len = n;
  spec.target_sparsity = sparsity;
  spec.pool = pool;
  spec.keep.assign(scores.values.size(), 0);
  spec.threshold.assign(batch * heads, 0.0);
  spec.keep_count.assign(batch * heads, 0);
  spec.selectable.assign(batch * heads, 0);

  const double* s = scores.values.data();
  auto gather = [&](std::size_t b, std::size_t h, std::vector<Candidate>& out) {
    const std::size_t base = (b * heads + h) * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!valid(b, i)) {
        continue;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (valid(b, j)) {
          out.push_back({s[base + i * n + j], base + i * n + j});
        }
      }
    }
    spec.selectable[b * heads + h] = valid.valid_count(b) * valid.valid_count(b);
  };

  std::vector<Candidate> candidates;
  if (pool == SelectionPool::per_head) {
    candidates.reserve(n * n);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        candidates.clear();
        gather(b, h, candidates);
        const std::size_t k = top_k_count(sparsity, candidates.size());
        spec.threshold[b * heads + h] = keep_top_k(candidates, k, spec.keep);
      }
    }
  } else {
    candidates.reserve(scores.values.size());
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        gather(b, h, candidates);
      }
    }
    const std::size_t k = top_k_count(sparsity, candidates.size());
    std::fill(spec.threshold.begin(), spec.threshold.end(), keep_top_k(candidates, k, spec.keep));
  }

  // Per-row guarantee: a valid query row with nothing kept keeps its maximum.
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = (b * heads + h) * n * n;
      std::size_t kept_here = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!valid(b, i)) {
          continue;
        }
        const std::size_t row = base + i * n;
        std::size_t row_kept = 0;
        std::size_t best = n;
        for (std::size_t j = 0; j < n; ++j) {
          if (!valid(b, j)) {
            continue;
          }
          row_kept += spec.keep[row + j];
          if (best == n || s[row + j] > s[row + best]) {
            best = j;
          }
        }
        if (row_kept < kMinKeepPerRow) {
          spec.keep[row + best] = 1;
          ++spec.forced_keeps;
          row_kept = 1;
        }
        kept_here += row_kept;
      }
      spec.keep_count[b * heads + h] = kept_here;
    }
  }
  return spec;
}

ScoreTensor apply_sparsity_mask(const ScoreTensor& scores, const SparseMaskSpec& spec) {
  if (spec.keep.size() != scores.values.size() || scores.values.rank() != 4 || spec.batch != scores.batch() ||
      spec.heads != scores.heads() || spec.seq_len != scores.seq_len()) {
    throw DimensionError("mask spec is not aligned with scores " + scores.values.shape_string());
  }
  ScoreTensor masked = scores;
  double* out = masked.values.data();
  for (std::size_t idx = 0; idx < spec.keep.size(); ++idx) {
    if (!spec.keep[idx]) {
      out[idx] = kNegInf;
    }
  }
  return masked;
}

Tensor sparse_softmax(const ScoreTensor& masked, std::size_t head_dim, const ValidityMask& valid) {
  require_rank4(masked.values, "masked scores");
  if (head_dim == 0) {
    throw DimensionError("head_dim must be >= 1");
  }
  const std::size_t batch = masked.batch(), heads = masked.heads(), n = masked.seq_len();
  require_mask_matches(valid, batch, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor weights({batch, heads, n, n});
  const double* in = masked.values.data();
  double* out = weights.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!valid(b, i)) {
          continue;
        }
        const std::size_t row = ((b * heads + h) * n + i) * n;
        double peak = kNegInf;
        for (std::size_t j = 0; j < n; ++j) {
          if (in[row + j] != kNegInf) {
            peak = std::max(peak, in[row + j] * scale);
          }
        }
        if (peak == kNegInf) {
          throw InvariantError("valid query row " + std::to_string(i) + " of sequence " + std::to_string(b) +
                               ", head " + std::to_string(h) + " has no kept entries");
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (in[row + j] != kNegInf) {
            out[row + j] = std::exp(in[row + j] * scale - peak);
            total += out[row + j];
          }
        }
        for (std::size_t j = 0; j < n; ++j) {
          out[row + j] /= total;
        }
      }
    }
  }
  return weights;
}

AttentionOutput sparse_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, double sparsity,
                                         const ValidityMask& valid, SelectionPool pool) {
  require_rank4(v, "V");
  if (!v.same_shape(q)) {
    throw DimensionError("V " + v.shape_string() + " does not match Q " + q.shape_string());
  }
  const ScoreTensor scores = raw_scores(q, k);
  AttentionOutput out;
  out.mask = select_threshold(scores, sparsity, valid, pool);
  out.weights = sparse_softmax(apply_sparsity_mask(scores, out.mask), q.dim(3), valid);

  const std::size_t batch = q.dim(0), heads = q.dim(1), n = q.dim(2), dk = q.dim(3);
  out.context = Tensor({batch, heads, n, dk});
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    const double* w = out.weights.data() + bh * n * n;
    const double* vs = v.data() + bh * n * dk;
    double* ctx = out.context.data() + bh * n * dk;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double p = w[i * n + j];
        if (p == 0.0) {
          continue;
        }
        for (std::size_t c = 0; c < dk; ++c) {
          ctx[i * dk + c] += p * vs[j * dk + c];
        }
      }
    }
  }
  return out;
}

AttentionGrads sparse_attention_backward(const Tensor& grad_context, const AttentionState& state) {
  if (!state.ready()) {
    throw StateError("sparse_attention_backward called without a forward cache");
  }
  if (!grad_context.same_shape(state.q)) {
    throw DimensionError("grad_context " + grad_context.shape_string() + " does not match forward shape " +
                         state.q.shape_string());
  }
  const std::size_t batch = state.q.dim(0), heads = state.q.dim(1), n = state.q.dim(2), dk = state.q.dim(3);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const SparseMaskSpec& mask = state.output.mask;

  AttentionGrads grads{Tensor(state.q.shape()), Tensor(state.k.shape()), Tensor(state.v.shape())};
  std::vector<double> grad_weight(n);
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    const double* w = state.output.weights.data() + bh * n * n;
    const std::uint8_t* keep = mask.keep.data() + bh * n * n;
    const double* qs = state.q.data() + bh * n * dk;
    const double* ks = state.k.data() + bh * n * dk;
    const double* vs = state.v.data() + bh * n * dk;
    const double* gc = grad_context.data() + bh * n * dk;
    double* gq = grads.q.data() + bh * n * dk;
    double* gk = grads.k.data() + bh * n * dk;
    double* gv = grads.v.data() + bh * n * dk;

    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        grad_weight[j] = 0.0;
        if (!keep[i * n + j]) {
          continue;
        }
        const double p = w[i * n + j];
        for (std::size_t c = 0; c < dk; ++c) {
          grad_weight[j] += gc[i * dk + c] * vs[j * dk + c];
          gv[j * dk + c] += p * gc[i * dk + c];
        }
        dot += p * grad_weight[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!keep[i * n + j]) {
          continue;
        }
        const double grad_score = w[i * n + j] * (grad_weight[j] - dot) * scale;
        for (std::size_t c = 0; c < dk; ++c) {
          gq[i * dk + c] += grad_score * ks[j * dk + c];
          gk[j * dk + c] += grad_score * qs[i * dk + c];
        }
      }
    }
  }
  return grads;
}

}  // namespace sparseattn
