// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace seldkit::nn {

namespace {
thread_local std::uint64_t g_region_sig = 1469598103934665603ULL;  // FNV offset
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void reset_region_signature() { g_region_sig = 1469598103934665603ULL; }
std::uint64_t region_signature() { return g_region_sig; }
void signature_mix(std::uint64_t bits) {
  g_region_sig = (g_region_sig ^ bits) * 1099511628211ULL;
}

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

TensorPtr Tensor::leaf(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values.assign(static_cast<std::size_t>(shape_size(t->shape)), 0.0);
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(t->values.size(), 0.0);
  return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad) {
  if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("Tensor::from: value count does not match shape");
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(t->values.size(), 0.0);
  return t;
}

TensorPtr Tensor::scalar(double v) { return from({1}, {v}); }

void Tensor::zero_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::fill(double v) { std::fill(values.begin(), values.end(), v); }

void backward(const TensorPtr& loss) {
  if (loss->size() != 1) {
    throw ShapeError("backward: loss must be a scalar tensor");
  }

  // Post-order DFS; the reversed order visits each node after all consumers.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grad buffers start from zero each pass; leaves accumulate.
  for (Tensor* t : order) {
    const bool interior = t->backward_fn != nullptr;
    if (interior || t->requires_grad) {
      if (t->grad.size() != t->values.size()) t->grad.assign(t->values.size(), 0.0);
      if (interior) std::fill(t->grad.begin(), t->grad.end(), 0.0);
    }
  }

  if (loss->grad.size() != loss->values.size()) loss->grad.assign(1, 0.0);
  loss->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

}  // namespace seldkit::nn
