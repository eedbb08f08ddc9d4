// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "seldkit/tensor.hpp"

namespace seldkit::nn {

/// One conv block: 3x3 conv (pad 1) -> batch norm -> ReLU -> max pool.
/// Pooling kernel is (pool_t, pool_f); hist-style inputs disable frequency
/// pooling once the feature dim turns odd, so pool_f may be 1.
struct ConvBlockParams {
  TensorPtr kernel;   // [out, in, 3, 3]
  TensorPtr bias;     // [out]
  TensorPtr bn_gamma; // [out]
  TensorPtr bn_beta;  // [out]
  std::vector<double> bn_mean;  // running, eval mode
  std::vector<double> bn_var;   // running, eval mode; strictly positive
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  int pool_t = 2;
  int pool_f = 2;

  static ConvBlockParams make(int in_ch, int out_ch, int pool_t, int pool_f,
                              Rng& rng);
  int in_channels() const { return kernel->dim(1); }
  int out_channels() const { return kernel->dim(0); }
};

/// x: [N, Cin, T, F] -> [N, Cout, T/pool_t, F/pool_f].
/// In train mode batch statistics normalize and update the running stats;
/// in eval mode the running stats are used.
TensorPtr conv_block_forward(const TensorPtr& x, ConvBlockParams& p,
                             bool train_mode);

/// Gate-concatenated weights in (reset | update | candidate) order.
struct GruDirectionParams {
  TensorPtr w_ih;  // [3H, D]
  TensorPtr w_hh;  // [3H, H]
  TensorPtr b_ih;  // [3H]
  TensorPtr b_hh;  // [3H]
};

struct GruParams {
  int input_size = 0;
  int hidden_size = 0;
  GruDirectionParams dir[2];  // 0: forward, 1: backward

  static GruParams make(int input_size, int hidden_size, Rng& rng);
};

/// x: [N, T, D] -> [N, T, 2H], forward and backward passes concatenated
/// per frame. Zero initial hidden state.
TensorPtr bigru_forward(const TensorPtr& x, const GruParams& p);

/// Affine map over the last dim: x [..., D], w [D, K], b [K] -> [..., K].
TensorPtr linear_forward(const TensorPtr& x, const TensorPtr& w,
                         const TensorPtr& b);

TensorPtr sigmoid_op(const TensorPtr& x);
TensorPtr tanh_op(const TensorPtr& x);

/// [N, C, T, F] -> [N, T, C], mean over the frequency dim.
TensorPtr mean_over_freq(const TensorPtr& x);

/// Nearest-neighbor temporal upsample x2: [N, T, K] -> [N, 2T, K].
TensorPtr upsample_time2(const TensorPtr& x);

/// Same data, new shape (element count must match).
TensorPtr reshape(const TensorPtr& x, std::vector<int> shape);

/// wa * a + wb * b, elementwise on same-shape tensors.
TensorPtr add_weighted(const TensorPtr& a, double wa, const TensorPtr& b,
                       double wb);

TensorPtr sum_all(const TensorPtr& x);

/// Mean of -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7].
/// Targets are plain data (not differentiated), values in [0, 1].
TensorPtr bce_loss(const TensorPtr& probs, std::span<const double> targets);

/// Sum of squared error over mask=1 entries divided by the count of mask=1
/// entries; 0 with zero gradient when the mask is empty.
TensorPtr masked_mse_loss(const TensorPtr& pred, std::span<const double> target,
                          std::span<const double> mask);

}  // namespace seldkit::nn
