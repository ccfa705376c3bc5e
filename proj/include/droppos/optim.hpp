#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "droppos/errors.hpp"
#include "droppos/vit.hpp"

namespace droppos {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <class T>
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;  // first moments, parallel to the parameter list
  std::vector<std::vector<T>> v;  // second moments

  static OptimizerState for_params(const ParamList<T>& params) {
    OptimizerState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.numel(), T(0));
      s.v.emplace_back(p.tensor.numel(), T(0));
    }
    return s;
  }
};

/// One AdamW update from the grads currently held by `params`:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// Decay is skipped for params flagged `decay == false`.
template <class T>
void adamw_step(const ParamList<T>& params, OptimizerState<T>& state, const AdamWConfig& hp, double lr) {
  if (lr < 0) throw ContractError("adamw_step: negative learning rate");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                        std::to_string(params.size()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw ShapeError("adamw_step: state for " + params[k].name + " does not match " + shape_str(p.shape()));
    }
    auto g = p.grad();
    auto data = p.data();
    const double wd = params[k].decay ? hp.weight_decay : 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = static_cast<T>(hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i]);
      v[i] = static_cast<T>(hp.beta2 * v[i] + (1.0 - hp.beta2) * static_cast<double>(g[i]) * g[i]);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      data[i] = static_cast<T>(data[i] - lr * (m_hat / (std::sqrt(v_hat) + hp.eps) + wd * data[i]));
    }
  }
}

/// Linear scaling rule: lr = base_lr * batch_size / 256.
inline double scaled_lr(double base_lr, std::size_t batch_size) {
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then half-cosine
/// decay to 0 at `total_steps`.
inline double lr_at(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps, double peak_lr) {
  if (step >= total_steps) return 0.0;
  if (step < warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace droppos
