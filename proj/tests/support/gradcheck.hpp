#pragma once

// Central finite-difference oracle. It only calls the forward function, never
// the backward pass, so it stays independent of the gradients it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gatewire/rng.hpp"
#include "gatewire/tensor.hpp"

namespace gatewire::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Relative error with a 1e-3 floor on the denominator, so gradients that are
// zero or tiny are compared absolutely at 1e-7 (well above FD round-off of
// about 1e-10 at h = 1e-6).
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-3, std::abs(analytic), std::abs(numeric)});
}

inline GradCheck gradcheck(std::vector<Tensor> leaves, const std::function<Tensor()>& loss_fn, double h = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
  GradCheck out;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto data = leaves[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn().item();
      data[i] = saved - h;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic[k][i], numeric));
      ++out.checked;
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Random values bounded away from zero, for ReLU kinks.
inline Tensor random_nonzero(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double mag = rng.uniform(0.05, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// sum(out * weights) with fixed random weights: a generic scalar projection.
inline Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

}  // namespace gatewire::testing
