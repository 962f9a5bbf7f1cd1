// SPDX-License-Identifier: Apache-2.0
#ifndef CDN_OPTIM_HPP
#define CDN_OPTIM_HPP

#include <cmath>
#include <vector>

#include "cdn/core.hpp"
#include "cdn/model.hpp"

namespace cdn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  bool decoupled_decay = false;  // default: classic L2 added to the gradient
};

// First/second moments mirror the parameter list; t counts completed steps.
template <class T>
struct AdamStateT {
  std::vector<TensorT<T>> m;
  std::vector<TensorT<T>> v;
  std::int64_t t = 0;

  AdamStateT() = default;
  explicit AdamStateT(const std::vector<NamedTensor<T>>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p.tensor->shape());
      v.emplace_back(p.tensor->shape());
    }
  }
};

using AdamState = AdamStateT<float>;

// Bias-corrected Adam with L2 weight decay folded into the gradient.
// Per-element arithmetic stays in T so trajectories are reproducible.
template <class T>
void adam_step(const std::vector<NamedTensor<T>>& params, AdamStateT<T>& state, T lr,
               const AdamConfig& cfg = {}) {
  if (state.m.size() != params.size())
    throw ConfigError("adam_step: state does not match parameter list");
  state.t += 1;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(state.t))));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(state.t))));
  const T eps = static_cast<T>(cfg.eps);
  const T wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorT<T>& p = *params[i].tensor;
    if (!p.requires_grad())
      throw NumericalError("adam_step: parameter '" + params[i].name + "' has no gradient");
    T* w = p.data();
    const T* g = p.grad();
    T* mp = state.m[i].data();
    T* vp = state.v[i].data();
    const std::int64_t n = p.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      T grad = g[j];
      if (!cfg.decoupled_decay && wd != T(0)) grad += wd * w[j];
      mp[j] = b1 * mp[j] + (T(1) - b1) * grad;
      vp[j] = b2 * vp[j] + (T(1) - b2) * grad * grad;
      const T mhat = mp[j] * c1;
      const T vhat = vp[j] * c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      if (cfg.decoupled_decay && wd != T(0)) w[j] -= lr * wd * w[j];
    }
  }
}

// Step decay: lr0 * factor^floor(epoch / every).
inline double lr_at(std::int64_t epoch, double lr0, double factor = 0.5, std::int64_t every = 30) {
  if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
  if (every < 1) throw ConfigError("lr_at: decay interval must be >= 1");
  return lr0 * std::pow(factor, static_cast<double>(epoch / every));
}

}  // namespace cdn

#endif  // CDN_OPTIM_HPP
