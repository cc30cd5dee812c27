// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparseattn/errors.hpp"
#include "sparseattn/sparsity_schedule.hpp"

namespace sparseattn {

namespace {

constexpr double kRowSumTolerance = 1e-6;

SparsityMeasurement finish(std::vector<std::size_t> kept, std::vector<std::size_t> selectable) {
  SparsityMeasurement m;
  m.kept = std::accumulate(kept.begin(), kept.end(), std::size_t{0});
  m.selectable = std::accumulate(selectable.begin(), selectable.end(), std::size_t{0});
  if (m.selectable == 0) {
    throw DataError("cannot measure sparsity of an empty selection pool");
  }
  for (std::size_t h = 0; h < kept.size(); ++h) {
    m.per_head.push_back(selectable[h] ? 1.0 - static_cast<double>(kept[h]) / static_cast<double>(selectable[h])
                                       : 0.0);
  }
  m.overall = 1.0 - static_cast<double>(m.kept) / static_cast<double>(m.selectable);
  return m;
}

}  // namespace

SparsityMeasurement measure_sparsity(const SparseMaskSpec& spec) {
  std::vector<std::size_t> kept(spec.heads, 0), selectable(spec.heads, 0);
  for (std::size_t b = 0; b < spec.batch; ++b) {
    for (std::size_t h = 0; h < spec.heads; ++h) {
      kept[h] += spec.keep_count[b * spec.heads + h];
      selectable[h] += spec.selectable[b * spec.heads + h];
    }
  }
  return finish(std::move(kept), std::move(selectable));
}

SparsityMeasurement measure_sparsity(const Tensor& weights, const ValidityMask& valid) {
  if (weights.rank() != 4 || weights.dim(0) != valid.batch() || weights.dim(2) != valid.seq_len()) {
    throw DimensionError("weights " + weights.shape_string() + " do not match the validity mask");
  }
  const std::size_t batch = weights.dim(0), heads = weights.dim(1), n = weights.dim(2);
  std::vector<std::size_t> kept(heads, 0), selectable(heads, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (valid(b, i) && valid(b, j)) {
            ++selectable[h];
            kept[h] += weights.at(b, h, i, j) != 0.0;
          }
        }
      }
    }
  }
  return finish(std::move(kept), std::move(selectable));
}

double row_entropy(std::span<const double> row) {
  double h = 0.0;
  for (double p : row) {
    if (p > 0.0) {
      h -= p * std::log(p);
    }
  }
  return h;
}

EntropyStats attention_entropy(const Tensor& weights, const ValidityMask& valid) {
  if (weights.rank() != 4 || weights.dim(0) != valid.batch() || weights.dim(2) != valid.seq_len()) {
    throw DimensionError("weights " + weights.shape_string() + " do not match the validity mask");
  }
  const std::size_t batch = weights.dim(0), heads = weights.dim(1), n = weights.dim(2);
  EntropyStats stats;
  stats.per_head.assign(heads, 0.0);
  std::vector<std::size_t> rows_per_head(heads, 0);
  std::vector<double> row(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!valid(b, i)) {
          continue;
        }
        row.clear();
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (valid(b, j)) {
            row.push_back(weights.at(b, h, i, j));
            total += row.back();
          }
        }
        if (std::abs(total - 1.0) > kRowSumTolerance) {
          throw InvariantError("attention row (" + std::to_string(b) + ", " + std::to_string(h) + ", " +
                               std::to_string(i) + ") sums to " + std::to_string(total));
        }
        const double e = row_entropy(row);
        stats.rows.push_back(e);
        stats.per_head[h] += e;
        ++rows_per_head[h];
      }
    }
  }
  for (std::size_t h = 0; h < heads; ++h) {
    if (rows_per_head[h]) {
      stats.per_head[h] /= static_cast<double>(rows_per_head[h]);
    }
  }
  if (!stats.rows.empty()) {
    stats.mean = std::accumulate(stats.rows.begin(), stats.rows.end(), 0.0) / static_cast<double>(stats.rows.size());
  }
  return stats;
}

void AttentionStatsAccumulator::add(const std::vector<AttentionOutput>& layers, const ValidityMask& valid) {
  if (layers_.empty()) {
    layers_.resize(layers.size());
  } else if (layers_.size() != layers.size()) {
    throw DimensionError("attention stats: layer count changed between batches");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const AttentionOutput& out = layers[l];
    const std::size_t heads = out.mask.heads;
    Counts& c = layers_[l];
    if (c.kept.empty()) {
      c.kept.assign(heads, 0);
      c.selectable.assign(heads, 0);
      c.entropy_sum.assign(heads, 0.0);
      c.rows.assign(heads, 0);
    }
    for (std::size_t b = 0; b < out.mask.batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        c.kept[h] += out.mask.keep_count[b * heads + h];
        c.selectable[h] += out.mask.selectable[b * heads + h];
      }
    }
    const EntropyStats e = attention_entropy(out.weights, valid);
    const std::size_t n = valid.seq_len();
    std::size_t idx = 0;
    for (std::size_t b = 0; b < out.mask.batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
          if (valid(b, i)) {
            c.entropy_sum[h] += e.rows[idx++];
            ++c.rows[h];
          }
        }
      }
    }
  }
}

AttentionStats AttentionStatsAccumulator::result() const {
  AttentionStats stats;
  std::size_t kept = 0, selectable = 0, rows = 0;
  double entropy = 0.0;
  for (const Counts& c : layers_) {
    std::vector<double> head_sparsity, head_entropy;
    std::size_t layer_kept = 0, layer_sel = 0, layer_rows = 0;
    double layer_entropy = 0.0;
    for (std::size_t h = 0; h < c.kept.size(); ++h) {
      head_sparsity.push_back(c.selectable[h] ? 1.0 - static_cast<double>(c.kept[h]) / static_cast<double>(c.selectable[h]) : 0.0);
      head_entropy.push_back(c.rows[h] ? c.entropy_sum[h] / static_cast<double>(c.rows[h]) : 0.0);
      layer_kept += c.kept[h];
      layer_sel += c.selectable[h];
      layer_rows += c.rows[h];
      layer_entropy += c.entropy_sum[h];
    }
    stats.head_sparsity.push_back(std::move(head_sparsity));
    stats.head_entropy.push_back(std::move(head_entropy));
    stats.layer_sparsity.push_back(layer_sel ? 1.0 - static_cast<double>(layer_kept) / static_cast<double>(layer_sel) : 0.0);
    stats.layer_entropy.push_back(layer_rows ? layer_entropy / static_cast<double>(layer_rows) : 0.0);
    kept += layer_kept;
    selectable += layer_sel;
    rows += layer_rows;
    entropy += layer_entropy;
  }
  stats.mean_sparsity = selectable ? 1.0 - static_cast<double>(kept) / static_cast<double>(selectable) : 0.0;
  stats.mean_entropy = rows ? entropy / static_cast<double>(rows) : 0.0;
  return stats;
}

CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw DataError("pearson: " + std::to_string(xs.size()) + " xs vs " + std::to_string(ys.size()) + " ys");
  }
  if (xs.size() < 2) {
    throw DataError("pearson: insufficient points (" + std::to_string(xs.size()) + ")");
  }
  const double count = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / count;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / count;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw CorrelationError("pearson: zero variance in " + std::string(sxx == 0.0 ? "xs" : "ys"));
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), xs.size()};
}

FlopsReport flops_report(std::size_t n, std::size_t d, const std::vector<std::pair<std::string, double>>& configs,
                         std::size_t ff_dim) {
  if (n < 1 || d < 1) {
    throw ConfigError("flops_report needs n >= 1 and d >= 1");
  }
  FlopsReport report;
  report.n = n;
  report.d = d;
  report.ff_dim = ff_dim ? ff_dim : 4 * d;
  const double nn = static_cast<double>(n), dd = static_cast<double>(d), ff = static_cast<double>(report.ff_dim);
  const double attention = 4.0 * nn * nn * dd;
  const double projections = 8.0 * nn * dd * dd;
  const double ffn = 4.0 * nn * dd * ff;
  for (const auto& [name, s] : configs) {
    if (!(s >= 0.0 && s < 1.0)) {
      throw ConfigError("attention sparsity for " + name + " must lie in [0, 1)");
    }
    FlopsRow row;
    row.config = name;
    row.attention_sparsity = s;
    row.dense_attention_flops = attention;
    row.sparse_attention_flops = (1.0 - s) * attention;
    row.projection_flops = projections;
    row.ffn_flops = ffn;
    row.attention_reduction_pct = 100.0 * s;
    row.total_reduction_pct = 100.0 * s * attention / (attention + projections);
    row.total_with_ffn_reduction_pct = 100.0 * s * attention / (attention + projections + ffn);
    report.rows.push_back(row);
  }
  return report;
}

std::vector<std::pair<std::string, double>> experiment_flops_configs() {
  const auto configs = experiment_configs(1);
  std::vector<std::pair<std::string, double>> out;
  for (const std::string& name : experiment_config_names()) {
    out.emplace_back(name, configs.at(name).target);
  }
  return out;
}

}  // namespace sparseattn
