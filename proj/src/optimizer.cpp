// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/optimizer.hpp"

#include <cmath>
#include <vector>

#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {

std::vector<Tensor*> tensors_of(ModelParams& params) {
  std::vector<Tensor*> out;
  params.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

}  // namespace

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
      !(epsilon > 0.0) || !(weight_decay >= 0.0) || accum_steps < 1) {
    throw ConfigError("invalid AdamW hyperparameters");
  }
}

AdamW::AdamW(const ModelParams& like, AdamWConfig config)
    : config_(config), m_(zeros_like(like)), v_(zeros_like(like)), accum_(zeros_like(like)) {
  config_.validate();
}

bool AdamW::step(ModelParams& params, const ModelParams& grads) {
  std::vector<Tensor*> acc = tensors_of(accum_);
  std::vector<const Tensor*> incoming;
  std::vector<std::string> names;
  grads.for_each([&](const std::string& name, const Tensor& t) {
    incoming.push_back(&t);
    names.push_back(name);
  });
  if (incoming.size() != acc.size()) {
    throw DimensionError("gradient structure does not match optimizer state");
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (!incoming[i]->same_shape(*acc[i])) {
      throw DimensionError("gradient " + names[i] + " has shape " + incoming[i]->shape_string());
    }
    if (!incoming[i]->all_finite()) {
      throw TrainingError("non-finite gradient in " + names[i] + " at optimizer step " +
                          std::to_string(updates_ + 1) + " (micro-batch " + std::to_string(pending_ + 1) + ")");
    }
    for (std::size_t j = 0; j < acc[i]->size(); ++j) {
      (*acc[i])[j] += (*incoming[i])[j];
    }
  }
  if (++pending_ < config_.accum_steps) {
    return false;
  }
  apply(params);
  return true;
}

void AdamW::apply(ModelParams& params) {
  ++updates_;
  const double t = static_cast<double>(updates_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  const double inv_accum = 1.0 / static_cast<double>(pending_);
  const double lr = config_.learning_rate;

  std::vector<Tensor*> ps = tensors_of(params);
  std::vector<Tensor*> ms = tensors_of(m_);
  std::vector<Tensor*> vs = tensors_of(v_);
  std::vector<Tensor*> gs = tensors_of(accum_);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor& p = *ps[i];
    Tensor& m = *ms[i];
    Tensor& v = *vs[i];
    Tensor& g = *gs[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double grad = g[j] * inv_accum;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * grad;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * grad * grad;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= lr * config_.weight_decay * p[j];
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      g[j] = 0.0;
    }
  }
  pending_ = 0;
}

}  // namespace sparseattn
