// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sparseattn/data.hpp"
#include "sparseattn/metrics.hpp"
#include "sparseattn/model.hpp"
#include "sparseattn/optimizer.hpp"
#include "sparseattn/sparsity_schedule.hpp"

namespace sparseattn {

struct TrainOptions {
  AdamWConfig optimizer;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::size_t eval_batch_size = 32;
  std::size_t eval_every = 50;  // optimizer steps; records are also emitted at epoch end
  std::uint64_t shuffle_seed = 7;

  // lr 2e-5, batch 16, 4 accumulation steps, 3 epochs.
  static TrainOptions distilbert_finetune_preset();
};

struct TrainRecord {
  std::size_t step = 0;  // optimizer updates so far
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  std::vector<double> layer_sparsity;
  double mean_sparsity = 0.0;
  double mean_entropy = 0.0;  // nats
};

struct EncodedSplit {
  std::vector<std::vector<std::int32_t>> ids;
  std::vector<int> labels;

  std::size_t size() const { return ids.size(); }
};

EncodedSplit encode_split(const std::vector<Example>& examples, const Vocab& vocab, std::size_t max_len);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  AttentionStats stats;
};

// Forward-only pass in fixed order, batch_size examples at a time.
EvalResult evaluate(const ModelParams& params, const ModelConfig& config, const AttentionPlan& plan,
                    const EncodedSplit& split, std::size_t batch_size);

struct TrainResult {
  ModelConfig config;  // vocab_size resolved to the built vocabulary
  Vocab vocab;
  ModelParams params;
  std::vector<TrainRecord> records;
  EvalResult final_eval;
};

using RecordSink = std::function<void(const TrainRecord&)>;

// Builds the vocabulary from the training split (capped at config.vocab_size),
// emits a step-0 record, then trains with seeded shuffling.
TrainResult train(const ModelConfig& config, const SparsityConfig& sparsity, const Corpus& corpus,
                  const TrainOptions& options, const RecordSink& sink = {});

}  // namespace sparseattn
