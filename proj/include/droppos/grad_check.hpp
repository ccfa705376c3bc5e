#pragma once

// Central-difference gradient oracle. Independent of the backward closures:
// the numeric side only ever evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <vector>

#include "droppos/tensor.hpp"

namespace droppos {

/// Gradient check over several leaves at once; `f` reads them from the
/// vector it is handed.
template <class T, class F>
double grad_check_params(F&& f, std::vector<Tensor<T>> params, T h) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<T> loss = f(params);
  backward(loss);

  double worst = 0;
  NoGradGuard no_grad;
  for (auto& p : params) {
    const std::vector<T> analytic(p.grad().begin(), p.grad().end());
    auto values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      // Divide by the step actually representable in T, not the nominal 2h.
      values[i] = saved + h;
      const double hi = values[i];
      const double up = f(params).item();
      values[i] = saved - h;
      const double lo = values[i];
      const double down = f(params).item();
      values[i] = saved;
      const double numeric = (up - down) / (hi - lo);
      const double a = analytic[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

/// max over coordinates of |analytic - numeric| / max(1, |analytic|), where
/// the analytic gradient comes from backward() and the numeric one from
/// (f(x + h e_i) - f(x - h e_i)) / 2h, with 2h taken as the difference of the
/// perturbed values after rounding to T.
///
/// `f` maps the tensor to a scalar tensor and must be a pure function of the
/// tensor's values (any random state fixed outside).
template <class T, class F>
double grad_check(F&& f, Tensor<T> x, T h) {
  std::vector<Tensor<T>> params{x};
  return grad_check_params(
      [&](const std::vector<Tensor<T>>& ps) { return f(ps[0]); }, params, h);
}

}  // namespace droppos
