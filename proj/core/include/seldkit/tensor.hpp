// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "seldkit/common.hpp"

namespace seldkit::nn {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Reverse-mode autodiff node. Values and grad are dense row-major 64-bit
/// arrays of identical shape. Non-leaf tensors carry the producing operation
/// as a backward closure plus the parent edges used for topological ordering.
///
/// A graph and its tensors are confined to one thread; distinct graphs may
/// run on distinct threads concurrently.
class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;

  static TensorPtr leaf(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr from(std::vector<int> shape, std::vector<double> values,
                        bool requires_grad = false);
  static TensorPtr scalar(double v);

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  void zero_grad();
  void fill(double v);

  /// True when `grad` participates in the current backward pass (leaf with
  /// requires_grad, or interior node reached from such a leaf).
  bool needs_grad_buffer() const { return !grad.empty(); }
};

std::int64_t shape_size(const std::vector<int>& shape);

/// Runs the backward pass from a scalar loss: topological order over the
/// graph, loss gradient seeded to 1. Leaf gradients ACCUMULATE across calls;
/// zero them between steps.
void backward(const TensorPtr& loss);

/// Piecewise-region signature of the most recent forward computations on
/// this thread. Kinked ops (ReLU, max-pool, clamps) mix their branch
/// decisions into the signature; two forward evaluations that land in the
/// same linear region produce the same signature. Used by the
/// finite-difference checker to detect and exclude kink crossings.
void reset_region_signature();
std::uint64_t region_signature();
void signature_mix(std::uint64_t bits);

/// When grad mode is off (inference, frozen feature extraction), ops skip
/// graph edges and saved activations. Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace seldkit::nn
