// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "sparseattn/model.hpp"

namespace sparseattn {

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t accum_steps = 1;

  void validate() const;
};

// Adam with decoupled weight decay. Gradients from accum_steps micro-batches
// are averaged before a single parameter update.
class AdamW {
 public:
  AdamW(const ModelParams& like, AdamWConfig config);

  // Feeds one micro-batch gradient. Returns true when it completed an
  // accumulation window and the parameters were updated.
  bool step(ModelParams& params, const ModelParams& grads);

  std::size_t update_count() const { return updates_; }
  std::size_t pending_micro_batches() const { return pending_; }
  const AdamWConfig& config() const { return config_; }
  const ModelParams& first_moment() const { return m_; }
  const ModelParams& second_moment() const { return v_; }

 private:
  void apply(ModelParams& params);

  AdamWConfig config_;
  ModelParams m_;
  ModelParams v_;
  ModelParams accum_;
  std::size_t updates_ = 0;
  std::size_t pending_ = 0;
};

}  // namespace sparseattn
