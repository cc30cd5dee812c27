// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kernels.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/rng.hpp"

namespace sparseattn {

namespace {

using kernels::add_bias;
using kernels::matmul_a_bt_add;
using kernels::matmul_add;
using kernels::matmul_at_b_add;
using kernels::sum_rows_add;

void layer_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& bias, Tensor& xhat,
                        std::vector<double>& rstd, Tensor& out) {
  const std::size_t rows = x.dim(0), d = x.dim(1);
  xhat = Tensor({rows, d});
  out = Tensor({rows, d});
  rstd.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      mean += xr[c];
    }
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      var += (xr[c] - mean) * (xr[c] - mean);
    }
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * rstd[r];
      xhat[r * d + c] = xh;
      out[r * d + c] = xh * gain[c] + bias[c];
    }
  }
}

// Accumulates gain/bias grads and returns d loss / d x.
Tensor layer_norm_backward(const Tensor& grad_out, const Tensor& xhat, const std::vector<double>& rstd,
                           const Tensor& gain, Tensor& grad_gain, Tensor& grad_bias) {
  const std::size_t rows = xhat.dim(0), d = xhat.dim(1);
  Tensor grad_x({rows, d});
  std::vector<double> gxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double g = grad_out[r * d + c];
      grad_gain[c] += g * xhat[r * d + c];
      grad_bias[c] += g;
      gxhat[c] = g * gain[c];
      mean_g += gxhat[c];
      mean_gx += gxhat[c] * xhat[r * d + c];
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      grad_x[r * d + c] = rstd[r] * (gxhat[c] - mean_g - xhat[r * d + c] * mean_gx);
    }
  }
  return grad_x;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double u) {
  const double cdf = 0.5 * (1.0 + std::erf(u * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * u * u) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + u * pdf;
}

// (batch*seq, heads*dk) -> (batch, heads, seq, dk)
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t seq, std::size_t heads) {
  const std::size_t dk = x.dim(1) / heads;
  Tensor out({batch, heads, seq, dk});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        const double* src = x.data() + (b * seq + i) * heads * dk + h * dk;
        std::copy(src, src + dk, out.data() + ((b * heads + h) * seq + i) * dk);
      }
    }
  }
  return out;
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t batch = x.dim(0), heads = x.dim(1), seq = x.dim(2), dk = x.dim(3);
  Tensor out({batch * seq, heads * dk});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        const double* src = x.data() + ((b * heads + h) * seq + i) * dk;
        std::copy(src, src + dk, out.data() + (b * seq + i) * heads * dk + h * dk);
      }
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t rows = x.dim(0), in = w.dim(0), out_dim = w.dim(1);
  Tensor y({rows, out_dim});
  matmul_add(x.data(), w.data(), y.data(), rows, in, out_dim);
  add_bias(b.data(), y.data(), rows, out_dim);
  return y;
}

// Accumulates weight/bias grads and adds d loss / d x into grad_x.
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& grad_y, Tensor& grad_w, Tensor& grad_b,
                     Tensor& grad_x) {
  const std::size_t rows = x.dim(0), in = w.dim(0), out_dim = w.dim(1);
  matmul_at_b_add(x.data(), grad_y.data(), grad_w.data(), rows, in, out_dim);
  sum_rows_add(grad_y.data(), grad_b.data(), rows, out_dim);
  matmul_a_bt_add(grad_y.data(), w.data(), grad_x.data(), rows, out_dim, in);
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += b[i];
  }
  return out;
}

Tensor as_rows(const Tensor& x) {
  if (x.rank() != 3) {
    throw DimensionError("expected (batch, seq_len, model_dim), got " + x.shape_string());
  }
  return Tensor({x.dim(0) * x.dim(1), x.dim(2)}, std::vector<double>(x.values().begin(), x.values().end()));
}

void init_uniform(Tensor& t, Rng& rng) {
  const double fan_in = static_cast<double>(t.dim(0));
  const double fan_out = static_cast<double>(t.dim(1));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : t.values()) {
    x = rng.uniform(-bound, bound);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || ff_dim < 1 || vocab_size < 1 || max_len < 1 || num_classes < 1) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
}

ModelConfig ModelConfig::distilbert_preset() {
  ModelConfig c;
  c.layers = 6;
  c.heads = 12;
  c.model_dim = 768;
  c.ff_dim = 3072;
  c.vocab_size = 30522;
  c.max_len = 512;
  return c;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for_each([&](const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
  return ok;
}

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.model_dim, f = config.ff_dim;
  ModelParams p;
  p.token_embedding = Tensor({config.vocab_size, d});
  p.position_embedding = Tensor({config.max_len, d});
  p.layers.resize(config.layers);
  for (auto& layer : p.layers) {
    for (Tensor* w : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) {
      *w = Tensor({d, d});
    }
    for (Tensor* b : {&layer.bq, &layer.bk, &layer.bv, &layer.bo, &layer.ln1_gain, &layer.ln1_bias,
                      &layer.ln2_gain, &layer.ln2_bias, &layer.ff2_b}) {
      *b = Tensor({d});
    }
    layer.ff1_w = Tensor({d, f});
    layer.ff1_b = Tensor({f});
    layer.ff2_w = Tensor({f, d});
  }
  p.classifier_w = Tensor({d, config.num_classes});
  p.classifier_b = Tensor({config.num_classes});
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  out.for_each([](const std::string&, Tensor& t) { t.fill(0.0); });
  return out;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  Rng rng(seed);
  p.for_each([&](const std::string& name, Tensor& t) {
    if (name.ends_with(".gain")) {
      t.fill(1.0);
    } else if (t.rank() == 2) {
      init_uniform(t, rng);
    }
  });
  return p;
}

Batch Batch::from_sequences(const std::vector<std::vector<std::int32_t>>& sequences, const std::vector<int>& labels) {
  if (sequences.empty()) {
    throw DataError("empty batch");
  }
  Batch batch;
  batch.size = sequences.size();
  std::vector<std::size_t> lengths;
  for (const auto& seq : sequences) {
    if (seq.empty()) {
      throw DataError("batch contains an empty sequence");
    }
    lengths.push_back(seq.size());
    batch.seq_len = std::max(batch.seq_len, seq.size());
  }
  batch.tokens.assign(batch.size * batch.seq_len, 0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    std::copy(sequences[b].begin(), sequences[b].end(),
              batch.tokens.begin() + static_cast<std::ptrdiff_t>(b * batch.seq_len));
  }
  batch.valid = ValidityMask::from_lengths(batch.seq_len, lengths);
  batch.labels = labels;
  return batch;
}

LayerOutput encoder_layer_forward(const Tensor& x, const LayerParams& params, std::size_t heads, double sparsity,
                                  SelectionPool pool, const ValidityMask& valid, LayerCache* cache) {
  const std::size_t batch = x.dim(0), seq = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("model_dim " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
  }
  LayerCache local;
  LayerCache& c = cache ? *cache : local;

  c.input = as_rows(x);
  layer_norm_forward(c.input, params.ln1_gain, params.ln1_bias, c.ln1_xhat, c.ln1_rstd, c.ln1_out);
  c.attention.q = split_heads(linear(c.ln1_out, params.wq, params.bq), batch, seq, heads);
  c.attention.k = split_heads(linear(c.ln1_out, params.wk, params.bk), batch, seq, heads);
  c.attention.v = split_heads(linear(c.ln1_out, params.wv, params.bv), batch, seq, heads);
  c.attention.output =
      sparse_attention_forward(c.attention.q, c.attention.k, c.attention.v, sparsity, valid, pool);
  c.concat = merge_heads(c.attention.output.context);
  c.mid = add(c.input, linear(c.concat, params.wo, params.bo));

  layer_norm_forward(c.mid, params.ln2_gain, params.ln2_bias, c.ln2_xhat, c.ln2_rstd, c.ln2_out);
  c.ff_pre = linear(c.ln2_out, params.ff1_w, params.ff1_b);
  c.ff_act = c.ff_pre;
  for (double& u : c.ff_act.values()) {
    u = gelu(u);
  }
  const Tensor out = add(c.mid, linear(c.ff_act, params.ff2_w, params.ff2_b));

  LayerOutput result{Tensor({batch, seq, d}, std::vector<double>(out.values().begin(), out.values().end())),
                     cache ? c.attention.output : std::move(c.attention.output)};
  return result;
}

ForwardResult model_forward(const Batch& batch, const ModelParams& params, const ModelConfig& config,
                            const AttentionPlan& plan, ForwardCache* cache) {
  config.validate();
  if (plan.layers() != config.layers || plan.pools.size() != config.layers) {
    throw ConfigError("attention plan has " + std::to_string(plan.layers()) + " layers, model has " +
                      std::to_string(config.layers));
  }
  if (batch.size == 0 || batch.tokens.size() != batch.size * batch.seq_len) {
    throw DataError("malformed batch");
  }
  if (batch.seq_len > config.max_len) {
    throw DataError("sequence length " + std::to_string(batch.seq_len) + " exceeds max_len " +
                    std::to_string(config.max_len));
  }
  const std::size_t n = batch.seq_len, d = config.model_dim;
  Tensor x({batch.size, n, d});
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::int32_t id = batch.tokens[b * n + i];
      if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(config.vocab_size));
      }
      const double* tok = params.token_embedding.data() + static_cast<std::size_t>(id) * d;
      const double* pos = params.position_embedding.data() + i * d;
      double* dst = x.data() + (b * n + i) * d;
      for (std::size_t c = 0; c < d; ++c) {
        dst[c] = tok[c] + pos[c];
      }
    }
  }

  if (cache) {
    cache->batch = batch.size;
    cache->seq_len = n;
    cache->heads = config.heads;
    cache->tokens = batch.tokens;
    cache->valid = batch.valid;
    cache->layers.assign(config.layers, LayerCache{});
  }

  ForwardResult result;
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerOutput layer = encoder_layer_forward(x, params.layers[l], config.heads, plan.schedule.per_layer[l],
                                              plan.pools[l], batch.valid, cache ? &cache->layers[l] : nullptr);
    x = std::move(layer.output);
    result.attention.push_back(std::move(layer.attention));
  }

  Tensor pooled({batch.size, d});
  for (std::size_t b = 0; b < batch.size; ++b) {
    const double count = static_cast<double>(batch.valid.valid_count(b));
    for (std::size_t i = 0; i < n; ++i) {
      if (!batch.valid(b, i)) {
        continue;
      }
      for (std::size_t c = 0; c < d; ++c) {
        pooled[b * d + c] += x[(b * n + i) * d + c] / count;
      }
    }
  }
  result.logits = linear(pooled, params.classifier_w, params.classifier_b);
  if (cache) {
    cache->pooled = std::move(pooled);
  }
  return result;
}

LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("logits " + logits.shape_string() + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult result{0.0, Tensor({batch, classes})};
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = logits.data() + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      total += std::exp(row[c] - peak);
    }
    const double log_total = std::log(total);
    result.loss += -(row[label] - peak - log_total);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - peak - log_total);
      result.grad_logits[b * classes + c] = (p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) /
                                            static_cast<double>(batch);
    }
  }
  result.loss /= static_cast<double>(batch);
  return result;
}

ModelParams backward(const Tensor& grad_logits, const ForwardCache& cache, const ModelParams& params) {
  if (!cache.ready()) {
    throw StateError("backward called without a forward cache");
  }
  const std::size_t batch = cache.batch, n = cache.seq_len, d = cache.pooled.dim(1);
  const std::size_t classes = params.classifier_w.dim(1);
  if (grad_logits.rank() != 2 || grad_logits.dim(0) != batch || grad_logits.dim(1) != classes) {
    throw DimensionError("grad_logits " + grad_logits.shape_string() + " does not match the cached batch");
  }
  ModelParams grads = zeros_like(params);

  Tensor grad_pooled({batch, d});
  linear_backward(cache.pooled, params.classifier_w, grad_logits, grads.classifier_w, grads.classifier_b,
                  grad_pooled);

  Tensor grad_x({batch * n, d});
  for (std::size_t b = 0; b < batch; ++b) {
    const double count = static_cast<double>(cache.valid.valid_count(b));
    for (std::size_t i = 0; i < n; ++i) {
      if (!cache.valid(b, i)) {
        continue;
      }
      for (std::size_t c = 0; c < d; ++c) {
        grad_x[(b * n + i) * d + c] = grad_pooled[b * d + c] / count;
      }
    }
  }

  for (std::size_t l = cache.layers.size(); l-- > 0;) {
    const LayerCache& c = cache.layers[l];
    const LayerParams& p = params.layers[l];
    LayerParams& g = grads.layers[l];
    const std::size_t rows = batch * n;
    const std::size_t f = p.ff1_w.dim(1);

    // Feed-forward sublayer: out = mid + ffn(ln2(mid)).
    Tensor grad_mid = grad_x;
    Tensor grad_act({rows, f});
    linear_backward(c.ff_act, p.ff2_w, grad_x, g.ff2_w, g.ff2_b, grad_act);
    for (std::size_t i = 0; i < grad_act.size(); ++i) {
      grad_act[i] *= gelu_grad(c.ff_pre[i]);
    }
    Tensor grad_ln2({rows, d});
    linear_backward(c.ln2_out, p.ff1_w, grad_act, g.ff1_w, g.ff1_b, grad_ln2);
    const Tensor grad_mid_ln = layer_norm_backward(grad_ln2, c.ln2_xhat, c.ln2_rstd, p.ln2_gain, g.ln2_gain,
                                                   g.ln2_bias);
    for (std::size_t i = 0; i < grad_mid.size(); ++i) {
      grad_mid[i] += grad_mid_ln[i];
    }

    // Attention sublayer: mid = input + wo(concat) with concat = MHSA(ln1(input)).
    Tensor grad_concat({rows, d});
    linear_backward(c.concat, p.wo, grad_mid, g.wo, g.bo, grad_concat);
    const AttentionGrads ag = sparse_attention_backward(split_heads(grad_concat, batch, n, cache.heads), c.attention);
    Tensor grad_ln1({rows, d});
    linear_backward(c.ln1_out, p.wq, merge_heads(ag.q), g.wq, g.bq, grad_ln1);
    linear_backward(c.ln1_out, p.wk, merge_heads(ag.k), g.wk, g.bk, grad_ln1);
    linear_backward(c.ln1_out, p.wv, merge_heads(ag.v), g.wv, g.bv, grad_ln1);
    const Tensor grad_in_ln = layer_norm_backward(grad_ln1, c.ln1_xhat, c.ln1_rstd, p.ln1_gain, g.ln1_gain,
                                                  g.ln1_bias);
    grad_x = grad_mid;
    for (std::size_t i = 0; i < grad_x.size(); ++i) {
      grad_x[i] += grad_in_ln[i];
    }
  }

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!cache.valid(b, i)) {
        continue;
      }
      const auto id = static_cast<std::size_t>(cache.tokens[b * n + i]);
      for (std::size_t c = 0; c < d; ++c) {
        grads.token_embedding[id * d + c] += grad_x[(b * n + i) * d + c];
        grads.position_embedding[i * d + c] += grad_x[(b * n + i) * d + c];
      }
    }
  }
  return grads;
}

}  // namespace sparseattn
