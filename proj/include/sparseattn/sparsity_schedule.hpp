// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sparseattn/sparse_attention.hpp"

namespace sparseattn {

enum class SparsityMode { baseline, uniform, adaptive };

std::string_view to_string(SparsityMode mode);
SparsityMode parse_sparsity_mode(std::string_view name);

inline constexpr double kDefaultRampWidth = 0.2;

struct SparsityConfig {
  SparsityMode mode = SparsityMode::baseline;
  double target = 0.0;
  double ramp_width = kDefaultRampWidth;  // adaptive only
  std::size_t layers = 1;

  // Throws ConfigError when the config cannot produce a schedule in [0, 1).
  void validate() const;
};

struct LayerSchedule {
  std::vector<double> per_layer;  // index 0 = first layer

  std::size_t layers() const { return per_layer.size(); }
  double mean() const;
};

// Schedule plus the selection pool each layer thresholds over.
struct AttentionPlan {
  LayerSchedule schedule;
  std::vector<SelectionPool> pools;

  std::size_t layers() const { return schedule.layers(); }
};

// baseline: zeros; uniform: target everywhere; adaptive: a linear ramp of
// width ramp_width centred on target, shallow layers sparsest-least.
LayerSchedule build_schedule(const SparsityConfig& config);

// The four experiment configurations keyed by name: baseline, uniform_sparse,
// light_sparse, aggressive_sparse.
std::map<std::string, SparsityConfig> experiment_configs(std::size_t layers);
const std::vector<std::string>& experiment_config_names();

// uniform thresholds per head matrix; adaptive pools every head and batch
// item of a layer so each layer meets its own ratio on the current batch.
std::vector<SelectionPool> batch_threshold_mode(const SparsityConfig& config);

AttentionPlan make_plan(const SparsityConfig& config);
AttentionPlan dense_plan(std::size_t layers);

}  // namespace sparseattn
