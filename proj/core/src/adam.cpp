// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/adam.hpp"

#include <cmath>

namespace seldkit::nn {

void AdamState::init(const std::vector<TensorPtr>& params) {
  m.clear();
  v.clear();
  step = 0;
  for (const auto& p : params) {
    m.emplace_back(p->values.size(), 0.0);
    v.emplace_back(p->values.size(), 0.0);
  }
}

void adam_step(const std::vector<TensorPtr>& params, AdamState& state, double lr) {
  if (!state.initialized()) state.init(params);
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state does not match parameter list");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.grad.size() != p.values.size()) {
      throw ShapeError("adam_step: parameter has no gradient buffer");
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double g = p.grad[j];
      if (!std::isfinite(g)) {
        throw DivergenceError("adam_step: non-finite gradient at step " +
                              std::to_string(state.step));
      }
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.values[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void zero_grads(const std::vector<TensorPtr>& params) {
  for (const auto& p : params) p->zero_grad();
}

}  // namespace seldkit::nn
