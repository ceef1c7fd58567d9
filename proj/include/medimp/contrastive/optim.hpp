#pragma once

#include "medimp/numerics/graph.hpp"

#include <cmath>
#include <map>
#include <numbers>

namespace medimp {

struct Schedule {
  double base_lr = 1e-3;
  double warmup_epochs = 6;
  double epochs = 30;
};

/// Linear warmup from 0, then half-cosine decay to 0 at the final epoch.
/// Epoch is fractional so per-step rates interpolate between epochs.
inline double lr_at(double epoch, const Schedule& s) {
  if (epoch < 0 || epoch > s.epochs)
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(s.epochs) + "]");
  if (epoch < s.warmup_epochs) return s.base_lr * epoch / s.warmup_epochs;
  const double t = (epoch - s.warmup_epochs) / (s.epochs - s.warmup_epochs);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamWConfig {
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct AdamMoments {
  std::map<std::string, Tensor<T>> m, v;
  std::size_t t = 0;
};

/// One decoupled-decay Adam step over every trainable parameter that has a gradient.
/// Decay p ← p·(1 − lr·wd) is skipped for parameters flagged decay = false.
template <std::floating_point T>
void adamw_step(ParameterStore<T>& params, const std::map<std::string, Tensor<T>>& grads,
                AdamMoments<T>& state, double lr, const AdamWConfig& cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (auto& p : params.all()) {
    if (!p.trainable) continue;
    auto git = grads.find(p.name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    if (g.shape() != p.value.shape())
      throw ShapeError("adamw_step: gradient " + shape_str(g.shape()) + " for '" + p.name +
                       "' " + shape_str(p.value.shape()));
    auto& m = state.m.try_emplace(p.name, zeros_like(p.value)).first->second;
    auto& v = state.v.try_emplace(p.name, zeros_like(p.value)).first->second;
    const double decay = p.decay ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      p.value[i] = static_cast<T>(double(p.value[i]) * decay - step);
    }
  }
}

}  // namespace medimp
