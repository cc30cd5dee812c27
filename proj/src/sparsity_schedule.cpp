// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/sparsity_schedule.hpp"

#include <cmath>
#include <numeric>

#include "sparseattn/errors.hpp"

namespace sparseattn {

std::string_view to_string(SparsityMode mode) {
  switch (mode) {
    case SparsityMode::baseline:
      return "baseline";
    case SparsityMode::uniform:
      return "uniform";
    case SparsityMode::adaptive:
      return "adaptive";
  }
  return "unknown";
}

SparsityMode parse_sparsity_mode(std::string_view name) {
  if (name == "baseline") {
    return SparsityMode::baseline;
  }
  if (name == "uniform") {
    return SparsityMode::uniform;
  }
  if (name == "adaptive") {
    return SparsityMode::adaptive;
  }
  throw ConfigError("unknown sparsity mode '" + std::string(name) + "' (expected baseline, uniform or adaptive)");
}

void SparsityConfig::validate() const {
  if (layers < 1) {
    throw ConfigError("sparsity config needs at least one layer");
  }
  if (!(target >= 0.0 && target < 1.0)) {
    throw ConfigError("sparsity target must lie in [0, 1), got " + std::to_string(target));
  }
  switch (mode) {
    case SparsityMode::baseline:
      if (target != 0.0) {
        throw ConfigError("baseline mode requires target 0");
      }
      break;
    case SparsityMode::uniform:
      break;
    case SparsityMode::adaptive:
      if (!(ramp_width >= 0.0)) {
        throw ConfigError("ramp_width must be >= 0");
      }
      // Ramp endpoints are target -/+ ramp_width/2 and must stay in [0, 1).
      if (layers > 1 && !(ramp_width < 2.0 * std::min(target, 1.0 - target) || ramp_width == 0.0)) {
        throw ConfigError("ramp_width " + std::to_string(ramp_width) + " around target " + std::to_string(target) +
                          " leaves [0, 1)");
      }
      break;
  }
}

double LayerSchedule::mean() const {
  if (per_layer.empty()) {
    return 0.0;
  }
  return std::accumulate(per_layer.begin(), per_layer.end(), 0.0) / static_cast<double>(per_layer.size());
}

LayerSchedule build_schedule(const SparsityConfig& config) {
  config.validate();
  LayerSchedule schedule;
  schedule.per_layer.assign(config.layers, 0.0);
  switch (config.mode) {
    case SparsityMode::baseline:
      break;
    case SparsityMode::uniform:
      schedule.per_layer.assign(config.layers, config.target);
      break;
    case SparsityMode::adaptive: {
      if (config.layers == 1) {
        schedule.per_layer[0] = config.target;
        break;
      }
      const double last = static_cast<double>(config.layers - 1);
      for (std::size_t l = 0; l < config.layers; ++l) {
        // Symmetric around the centre so the mean is the target.
        const double offset = config.ramp_width * (static_cast<double>(l) / last - 0.5);
        schedule.per_layer[l] = config.target + offset;
      }
      break;
    }
  }
  return schedule;
}

std::map<std::string, SparsityConfig> experiment_configs(std::size_t layers) {
  return {
      {"baseline", {SparsityMode::baseline, 0.0, kDefaultRampWidth, layers}},
      {"uniform_sparse", {SparsityMode::uniform, 0.8, kDefaultRampWidth, layers}},
      {"light_sparse", {SparsityMode::adaptive, 0.6, kDefaultRampWidth, layers}},
      {"aggressive_sparse", {SparsityMode::adaptive, 0.8, kDefaultRampWidth, layers}},
  };
}

const std::vector<std::string>& experiment_config_names() {
  static const std::vector<std::string> names = {"baseline", "light_sparse", "uniform_sparse", "aggressive_sparse"};
  return names;
}

std::vector<SelectionPool> batch_threshold_mode(const SparsityConfig& config) {
  config.validate();
  const SelectionPool pool =
      config.mode == SparsityMode::adaptive ? SelectionPool::per_layer_batch : SelectionPool::per_head;
  return std::vector<SelectionPool>(config.layers, pool);
}

AttentionPlan make_plan(const SparsityConfig& config) {
  return {build_schedule(config), batch_threshold_mode(config)};
}

AttentionPlan dense_plan(std::size_t layers) {
  return make_plan({SparsityMode::baseline, 0.0, kDefaultRampWidth, layers});
}

}  // namespace sparseattn
