// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/sparsity_schedule.hpp"

namespace sparseattn {
namespace {

TEST(Schedule, UniformAndBaseline) {
  EXPECT_EQ(build_schedule({SparsityMode::uniform, 0.8, 0.2, 6}).per_layer, std::vector<double>(6, 0.8));
  EXPECT_EQ(build_schedule({SparsityMode::baseline, 0.0, 0.2, 6}).per_layer, std::vector<double>(6, 0.0));
}

TEST(Schedule, AdaptiveRampArithmetic) {
  const LayerSchedule s = build_schedule({SparsityMode::adaptive, 0.6, 0.2, 6});
  const std::vector<double> expected{0.50, 0.54, 0.58, 0.62, 0.66, 0.70};
  ASSERT_EQ(s.layers(), 6u);
  for (std::size_t l = 0; l < 6; ++l) EXPECT_NEAR(s.per_layer[l], expected[l], 1e-12);
  EXPECT_NEAR(s.mean(), 0.6, 1e-12);
}

TEST(Schedule, AdaptiveMeanAndMonotoneAcrossDepths) {
  for (std::size_t L = 1; L <= 12; ++L) {
    for (double t : {0.3, 0.6, 0.8}) {
      const LayerSchedule s = build_schedule({SparsityMode::adaptive, t, 0.2, L});
      EXPECT_NEAR(s.mean(), t, 1e-12);
      for (std::size_t l = 0; l < L; ++l) {
        EXPECT_GE(s.per_layer[l], 0.0);
        EXPECT_LT(s.per_layer[l], 1.0);
        if (l > 0) {
          EXPECT_GT(s.per_layer[l], s.per_layer[l - 1]);
        }
      }
    }
  }
  EXPECT_EQ(build_schedule({SparsityMode::adaptive, 0.6, 0.2, 1}).per_layer, std::vector<double>{0.6});
}

TEST(Schedule, InvalidConfigsRejected) {
  EXPECT_THROW(build_schedule({SparsityMode::adaptive, 0.95, 0.2, 4}), ConfigError);
  EXPECT_THROW(build_schedule({SparsityMode::adaptive, 0.05, 0.2, 4}), ConfigError);
  EXPECT_THROW(build_schedule({SparsityMode::uniform, 1.0, 0.2, 4}), ConfigError);
  EXPECT_THROW(build_schedule({SparsityMode::baseline, 0.5, 0.2, 4}), ConfigError);
  EXPECT_THROW(build_schedule({SparsityMode::uniform, 0.5, 0.2, 0}), ConfigError);
  EXPECT_THROW(parse_sparsity_mode("ramp"), ConfigError);
  EXPECT_EQ(parse_sparsity_mode(to_string(SparsityMode::adaptive)), SparsityMode::adaptive);
}

TEST(Schedule, ExperimentConfigs) {
  const auto configs = experiment_configs(6);
  ASSERT_EQ(configs.size(), 4u);
  EXPECT_EQ(configs.at("baseline").target, 0.0);
  EXPECT_EQ(configs.at("uniform_sparse").target, 0.8);
  EXPECT_EQ(configs.at("light_sparse").target, 0.6);
  EXPECT_EQ(configs.at("aggressive_sparse").target, 0.8);
  EXPECT_EQ(configs.at("uniform_sparse").mode, SparsityMode::uniform);
  EXPECT_EQ(configs.at("light_sparse").mode, SparsityMode::adaptive);
  EXPECT_NEAR(build_schedule(configs.at("aggressive_sparse")).mean(), 0.8, 1e-12);
  EXPECT_NEAR(build_schedule(configs.at("aggressive_sparse")).per_layer.back(), 0.9, 1e-12);
  const LayerSchedule light = build_schedule(configs.at("light_sparse"));
  for (std::size_t l = 1; l < light.layers(); ++l) EXPECT_GT(light.per_layer[l], light.per_layer[l - 1]);
  for (const std::string& name : experiment_config_names()) EXPECT_TRUE(configs.count(name)) << name;
}

TEST(Schedule, SelectionPools) {
  const auto configs = experiment_configs(6);
  EXPECT_EQ(batch_threshold_mode(configs.at("uniform_sparse")),
            std::vector<SelectionPool>(6, SelectionPool::per_head));
  EXPECT_EQ(batch_threshold_mode(configs.at("light_sparse")),
            std::vector<SelectionPool>(6, SelectionPool::per_layer_batch));
  EXPECT_EQ(batch_threshold_mode(configs.at("aggressive_sparse")),
            std::vector<SelectionPool>(6, SelectionPool::per_layer_batch));
  const AttentionPlan dense = dense_plan(3);
  EXPECT_EQ(dense.schedule.per_layer, std::vector<double>(3, 0.0));
}

TEST(Schedule, RealizedSparsityTracksScheduleValue) {
  Rng rng(5);
  const LayerSchedule s = build_schedule(experiment_configs(4).at("aggressive_sparse"));
  for (double target : s.per_layer) {
    const ScoreTensor scores{oracle::random_tensor({3, 2, 20, 20}, rng)};
    const SparseMaskSpec spec =
        select_threshold(scores, target, ValidityMask(3, 20), SelectionPool::per_layer_batch);
    const double m = static_cast<double>(spec.total_selectable());
    const double slack = static_cast<double>(spec.forced_keeps) / m;
    EXPECT_LE(std::abs(spec.achieved_sparsity() - target), 1.0 / m + slack);
  }
}

}  // namespace
}  // namespace sparseattn
