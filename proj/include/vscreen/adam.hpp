#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/tensor.hpp"

namespace vscreen {

// Adam optimizer state: one first/second moment buffer per parameter tensor,
// plus the shared step count and hyperparameters. Moments are lazily shaped
// on the first step.
template <typename T>
struct AdamState {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One bias-corrected Adam update across a parameter list. params[i] is
// updated in place from grads[i]; the i-th moment pair tracks it across
// calls, so the list order must stay stable.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<const std::vector<T>*>& grads, AdamState<T>& state) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->numel(), T(0));
      state.v[i].assign(params[i]->numel(), T(0));
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    const std::vector<T>& g = *grads[i];
    if (g.size() != p.numel() || state.m[i].size() != p.numel())
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = state.beta1 * static_cast<double>(state.m[i][j]) +
                        (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * static_cast<double>(state.v[i][j]) +
                        (1.0 - state.beta2) * gj * gj;
      state.m[i][j] = static_cast<T>(mj);
      state.v[i][j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p.values[j] =
          static_cast<T>(static_cast<double>(p.values[j]) -
                         state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace vscreen
