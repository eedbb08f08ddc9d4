// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace seldkit::nn {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const std::function<TensorPtr()>& loss_fn) {
  reset_region_signature();
  NoGradGuard guard;
  TensorPtr loss = loss_fn();
  if (loss->size() != 1) throw ShapeError("grad_check: loss_fn must return a scalar");
  return {loss->values[0], region_signature()};
}

}  // namespace

GradCheckReport grad_check(const std::function<TensorPtr()>& loss_fn,
                           const std::vector<TensorPtr>& params, double h) {
  // Analytic gradients at the base point.
  for (const auto& p : params) p->zero_grad();
  TensorPtr loss = loss_fn();
  if (loss->size() != 1) throw ShapeError("grad_check: loss_fn must return a scalar");
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);
  loss.reset();

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double saved = p.values[j];
      p.values[j] = saved + h;
      const Probe plus = evaluate(loss_fn);
      p.values[j] = saved - h;
      const Probe minus = evaluate(loss_fn);
      p.values[j] = saved;

      if (plus.signature != minus.signature) {
        ++report.kinks_excluded;
        continue;
      }
      const double fd = (plus.value - minus.value) / (2.0 * h);
      const double g = analytic[pi][j];
      const double denom = std::max(std::abs(fd) + std::abs(g), 1e-6);
      const double rel = std::abs(fd - g) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_coord = "param " + std::to_string(pi) + "[" + std::to_string(j) +
                             "] analytic=" + std::to_string(g) +
                             " fd=" + std::to_string(fd);
      }
    }
  }
  return report;
}

}  // namespace seldkit::nn
