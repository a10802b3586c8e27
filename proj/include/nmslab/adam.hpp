#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "nmslab/tensor.hpp"

namespace nmslab::ad {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<double>> v;  // second moments

  void init(const std::vector<TensorPtr>& params) {
    m.clear();
    v.clear();
    for (const TensorPtr& p : params) {
      m.emplace_back(p->size(), 0.0);
      v.emplace_back(p->size(), 0.0);
    }
    step = 0;
  }
};

// One ADAM update with bias correction; gradients are read from each
// parameter's grad buffer.
inline void adam_step(const std::vector<TensorPtr>& params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state not init");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    t.ensure_grad();
    if (state.m[p].size() != t.size()) throw std::invalid_argument("adam_step: shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      state.m[p][i] = state.beta1 * state.m[p][i] + (1.0 - state.beta1) * g;
      state.v[p][i] = state.beta2 * state.v[p][i] + (1.0 - state.beta2) * g * g;
      const double m_hat = state.m[p][i] / bc1;
      const double v_hat = state.v[p][i] / bc2;
      t.values[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace nmslab::ad
