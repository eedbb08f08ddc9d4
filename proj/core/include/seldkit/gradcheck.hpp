// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seldkit/tensor.hpp"

namespace seldkit::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t coords_checked = 0;
  std::int64_t kinks_excluded = 0;
  std::string worst_coord;

  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Central finite differences per parameter coordinate against the backward
/// pass of loss_fn's graph. loss_fn must rebuild the graph from the current
/// parameter values on every call.
///
/// A coordinate whose +/-h evaluations land in different piecewise-linear
/// regions (a ReLU sign flip, a pool argmax change, a clamp boundary) is
/// reported in kinks_excluded and left out of the error maximum, since the
/// two-sided difference is meaningless across a kink.
GradCheckReport grad_check(const std::function<TensorPtr()>& loss_fn,
                           const std::vector<TensorPtr>& params,
                           double h = 1e-5);

}  // namespace seldkit::nn
