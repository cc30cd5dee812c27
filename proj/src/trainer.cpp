// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparseattn/errors.hpp"
#include "sparseattn/rng.hpp"

namespace sparseattn {

namespace {

Batch gather_batch(const EncodedSplit& split, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
  std::vector<std::vector<std::int32_t>> seqs;
  std::vector<int> labels;
  for (std::size_t i = begin; i < end; ++i) {
    seqs.push_back(split.ids[order[i]]);
    labels.push_back(split.labels[order[i]]);
  }
  return Batch::from_sequences(seqs, labels);
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t classes = logits.dim(1);
  const double* r = logits.data() + row * classes;
  return static_cast<std::size_t>(std::max_element(r, r + classes) - r);
}

}  // namespace

TrainOptions TrainOptions::distilbert_finetune_preset() {
  TrainOptions o;
  o.optimizer.learning_rate = 2e-5;
  o.optimizer.accum_steps = 4;
  o.batch_size = 16;
  o.epochs = 3;
  return o;
}

EncodedSplit encode_split(const std::vector<Example>& examples, const Vocab& vocab, std::size_t max_len) {
  EncodedSplit out;
  for (const Example& ex : examples) {
    if (ex.label != 0 && ex.label != 1) {
      throw DataError("label must be 0 or 1, got " + std::to_string(ex.label));
    }
    out.ids.push_back(vocab.encode(ex.text, max_len));
    out.labels.push_back(ex.label);
  }
  return out;
}

EvalResult evaluate(const ModelParams& params, const ModelConfig& config, const AttentionPlan& plan,
                    const EncodedSplit& split, std::size_t batch_size) {
  if (split.size() == 0) {
    throw DataError("cannot evaluate an empty split");
  }
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AttentionStatsAccumulator stats;
  EvalResult result;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < split.size(); begin += batch_size) {
    const std::size_t end = std::min(split.size(), begin + batch_size);
    const Batch batch = gather_batch(split, order, begin, end);
    const ForwardResult fwd = model_forward(batch, params, config, plan);
    const LossResult loss = cross_entropy_loss(fwd.logits, batch.labels);
    result.loss += loss.loss * static_cast<double>(batch.size);
    for (std::size_t b = 0; b < batch.size; ++b) {
      correct += argmax_row(fwd.logits, b) == static_cast<std::size_t>(batch.labels[b]);
    }
    stats.add(fwd.attention, batch.valid);
  }
  result.loss /= static_cast<double>(split.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  result.stats = stats.result();
  return result;
}

TrainResult train(const ModelConfig& config, const SparsityConfig& sparsity, const Corpus& corpus,
                  const TrainOptions& options, const RecordSink& sink) {
  if (corpus.train.empty() || corpus.validation.empty()) {
    throw DataError("training needs non-empty train and validation splits");
  }
  if (sparsity.layers != config.layers) {
    throw ConfigError("sparsity config covers " + std::to_string(sparsity.layers) + " layers, model has " +
                      std::to_string(config.layers));
  }
  if (options.batch_size < 1 || options.eval_batch_size < 1 || options.eval_every < 1) {
    throw ConfigError("batch sizes and eval interval must be >= 1");
  }
  config.validate();

  TrainResult result;
  result.vocab = Vocab::build(corpus.train, config.vocab_size);
  result.config = config;
  result.config.vocab_size = result.vocab.size();
  const ModelConfig& cfg = result.config;
  const AttentionPlan plan = make_plan(sparsity);

  const EncodedSplit train_split = encode_split(corpus.train, result.vocab, cfg.max_len);
  const EncodedSplit val_split = encode_split(corpus.validation, result.vocab, cfg.max_len);

  result.params = init_params(cfg, cfg.seed);
  AdamW optimizer(result.params, options.optimizer);
  Rng rng(options.shuffle_seed);

  auto emit = [&](std::size_t epoch, double train_loss) {
    result.final_eval = evaluate(result.params, cfg, plan, val_split, options.eval_batch_size);
    TrainRecord rec;
    rec.step = optimizer.update_count();
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.val_loss = result.final_eval.loss;
    rec.val_accuracy = result.final_eval.accuracy;
    rec.layer_sparsity = result.final_eval.stats.layer_sparsity;
    rec.mean_sparsity = result.final_eval.stats.mean_sparsity;
    rec.mean_entropy = result.final_eval.stats.mean_entropy;
    result.records.push_back(rec);
    if (sink) {
      sink(rec);
    }
  };

  emit(0, evaluate(result.params, cfg, plan, train_split, options.eval_batch_size).loss);

  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t last_recorded_step = 0;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      const Batch batch = gather_batch(train_split, order, begin, end);
      ForwardCache cache;
      LossResult loss;
      try {
        const ForwardResult fwd = model_forward(batch, result.params, cfg, plan, &cache);
        loss = cross_entropy_loss(fwd.logits, batch.labels);
      } catch (const InvariantError& e) {
        // Overflowing activations after a bad update are divergence, not a kernel bug.
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(optimizer.update_count()) + ": " + e.what());
      }
      if (!std::isfinite(loss.loss)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(optimizer.update_count()));
      }
      loss_sum += loss.loss;
      ++loss_count;
      const bool updated = optimizer.step(result.params, backward(loss.grad_logits, cache, result.params));
      if (updated && optimizer.update_count() % options.eval_every == 0) {
        emit(epoch, loss_sum / static_cast<double>(loss_count));
        loss_sum = 0.0;
        loss_count = 0;
        last_recorded_step = optimizer.update_count();
      }
    }
    if (last_recorded_step != optimizer.update_count() || loss_count > 0) {
      emit(epoch, loss_count ? loss_sum / static_cast<double>(loss_count) : result.records.back().train_loss);
      loss_sum = 0.0;
      loss_count = 0;
      last_recorded_step = optimizer.update_count();
    }
  }
  return result;
}

}  // namespace sparseattn
