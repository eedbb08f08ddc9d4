// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "seldkit/tensor.hpp"

namespace seldkit::nn {

/// Adam accumulators. m and v mirror the parameter list passed to init();
/// step increases by exactly 1 per adam_step call.
struct AdamState {
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(const std::vector<TensorPtr>& params);
  bool initialized() const { return !m.empty(); }
};

/// Standard Adam update with bias correction, reading gradients from each
/// parameter's grad buffer. Throws DivergenceError on non-finite gradients.
void adam_step(const std::vector<TensorPtr>& params, AdamState& state, double lr);

void zero_grads(const std::vector<TensorPtr>& params);

}  // namespace seldkit::nn
