// SPDX-License-Identifier: Apache-2.0
//
// Slow, obviously-correct reference implementations used by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "sparseattn/data.hpp"
#include "sparseattn/rng.hpp"
#include "sparseattn/sparse_attention.hpp"
#include "sparseattn/tensor.hpp"

namespace sparseattn::oracle {

inline Tensor random_tensor(const std::vector<std::size_t>& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) {
    v = rng.uniform(lo, hi);
  }
  return t;
}

// Full sort of every selectable entry in a pool, then the row guarantee.
inline std::vector<std::uint8_t> brute_force_keep(const Tensor& s, double sparsity, const ValidityMask& valid,
                                                  SelectionPool pool) {
  const std::size_t B = s.dim(0), H = s.dim(1), n = s.dim(2);
  std::vector<std::uint8_t> keep(s.size(), 0);
  auto flat = [&](std::size_t b, std::size_t h, std::size_t i, std::size_t j) { return ((b * H + h) * n + i) * n + j; };

  std::vector<std::vector<std::size_t>> pools;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      if (pool == SelectionPool::per_head || pools.empty()) {
        pools.emplace_back();
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (valid(b, i) && valid(b, j)) {
            pools.back().push_back(flat(b, h, i, j));
          }
        }
      }
    }
  }
  for (auto& members : pools) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t c) {
      return s[a] != s[c] ? s[a] > s[c] : a < c;
    });
    const double want = std::round((1.0 - sparsity) * static_cast<double>(members.size()));
    std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(want));
    k = std::min(k, members.size());
    for (std::size_t r = 0; r < k; ++r) {
      keep[members[r]] = 1;
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!valid(b, i)) continue;
        bool any = false;
        std::size_t best = n;
        for (std::size_t j = 0; j < n; ++j) {
          if (!valid(b, j)) continue;
          any = any || keep[flat(b, h, i, j)];
          if (best == n || s[flat(b, h, i, j)] > s[flat(b, h, i, best)]) best = j;
        }
        if (!any) keep[flat(b, h, i, best)] = 1;
      }
    }
  }
  return keep;
}

// Textbook softmax(QK^T / sqrt(d_k)) V over valid keys; padded query rows zero.
struct DenseAttention {
  Tensor weights;
  Tensor context;
};

inline DenseAttention dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ValidityMask& valid) {
  const std::size_t B = q.dim(0), H = q.dim(1), n = q.dim(2), dk = q.dim(3);
  DenseAttention out{Tensor({B, H, n, n}), Tensor({B, H, n, dk})};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!valid(b, i)) continue;
        std::vector<double> logits(n, -1e300);
        double peak = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          if (!valid(b, j)) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < dk; ++c) dot += q.at(b, h, i, c) * k.at(b, h, j, c);
          logits[j] = dot / std::sqrt(static_cast<double>(dk));
          peak = std::max(peak, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (valid(b, j)) z += std::exp(logits[j] - peak);
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (!valid(b, j)) continue;
          const double p = std::exp(logits[j] - peak) / z;
          out.weights.at(b, h, i, j) = p;
          for (std::size_t c = 0; c < dk; ++c) out.context.at(b, h, i, c) += p * v.at(b, h, j, c);
        }
      }
    }
  }
  return out;
}

// Bag-of-words logistic regression trained by full-batch gradient descent.
// Returns validation accuracy.
inline double bag_of_words_accuracy(const Corpus& corpus, int iterations = 300, double lr = 0.5) {
  std::map<std::string, std::size_t> index;
  auto features = [&](const std::string& text, bool grow) {
    std::map<std::size_t, double> f;
    for (const std::string& tok : tokenize(text)) {
      auto it = index.find(tok);
      if (it == index.end()) {
        if (!grow) continue;
        it = index.emplace(tok, index.size()).first;
      }
      f[it->second] = 1.0;
    }
    return f;
  };
  std::vector<std::map<std::size_t, double>> xs;
  for (const Example& e : corpus.train) xs.push_back(features(e.text, true));
  std::vector<double> w(index.size(), 0.0);
  double bias = 0.0;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> g(w.size(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double z = bias;
      for (const auto& [j, x] : xs[i]) z += w[j] * x;
      const double err = 1.0 / (1.0 + std::exp(-z)) - corpus.train[i].label;
      for (const auto& [j, x] : xs[i]) g[j] += err * x;
      gb += err;
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j] / static_cast<double>(xs.size());
    bias -= lr * gb / static_cast<double>(xs.size());
  }
  std::size_t correct = 0;
  for (const Example& e : corpus.validation) {
    double z = bias;
    for (const auto& [j, x] : features(e.text, false)) z += w[j] * x;
    correct += (z > 0.0) == (e.label == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(corpus.validation.size());
}

}  // namespace sparseattn::oracle
