// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <memory>

namespace seldkit::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void add_into(std::vector<double>& dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

/// im2col for a 3x3 kernel with pad 1: writes a row-major [Cin*9, T*F]
/// matrix whose row (ci*9 + dt*3 + df) holds x[ci, t+dt-1, f+df-1].
void im2col_3x3(const double* x, int cin, int t_dim, int f_dim, double* cols) {
  const std::int64_t tf = static_cast<std::int64_t>(t_dim) * f_dim;
  for (int ci = 0; ci < cin; ++ci) {
    const double* xc = x + static_cast<std::int64_t>(ci) * tf;
    for (int dt = 0; dt < 3; ++dt) {
      for (int df = 0; df < 3; ++df) {
        double* row = cols + (static_cast<std::int64_t>(ci) * 9 + dt * 3 + df) * tf;
        const int src_f0 = df - 1;
        for (int t = 0; t < t_dim; ++t) {
          const int src_t = t + dt - 1;
          double* out = row + static_cast<std::int64_t>(t) * f_dim;
          if (src_t < 0 || src_t >= t_dim) {
            std::memset(out, 0, sizeof(double) * static_cast<std::size_t>(f_dim));
            continue;
          }
          const double* src = xc + static_cast<std::int64_t>(src_t) * f_dim;
          int f_lo = std::max(0, -src_f0);
          int f_hi = std::min(f_dim, f_dim - src_f0);
          if (f_lo > 0) out[0] = 0.0;
          if (f_hi < f_dim) out[f_dim - 1] = 0.0;
          std::memcpy(out + f_lo, src + src_f0 + f_lo,
                      sizeof(double) * static_cast<std::size_t>(f_hi - f_lo));
        }
      }
    }
  }
}

/// Transpose of im2col_3x3: scatter-adds the cols gradient back to dx.
void col2im_3x3(const double* cols, int cin, int t_dim, int f_dim, double* dx) {
  const std::int64_t tf = static_cast<std::int64_t>(t_dim) * f_dim;
  for (int ci = 0; ci < cin; ++ci) {
    double* dxc = dx + static_cast<std::int64_t>(ci) * tf;
    for (int dt = 0; dt < 3; ++dt) {
      for (int df = 0; df < 3; ++df) {
        const double* row = cols + (static_cast<std::int64_t>(ci) * 9 + dt * 3 + df) * tf;
        const int src_f0 = df - 1;
        for (int t = 0; t < t_dim; ++t) {
          const int src_t = t + dt - 1;
          if (src_t < 0 || src_t >= t_dim) continue;
          const double* in = row + static_cast<std::int64_t>(t) * f_dim;
          double* dst = dxc + static_cast<std::int64_t>(src_t) * f_dim;
          const int f_lo = std::max(0, -src_f0);
          const int f_hi = std::min(f_dim, f_dim - src_f0);
          for (int f = f_lo; f < f_hi; ++f) dst[src_f0 + f] += in[f];
        }
      }
    }
  }
}

}  // namespace

ConvBlockParams ConvBlockParams::make(int in_ch, int out_ch, int pool_t,
                                      int pool_f, Rng& rng) {
  ConvBlockParams p;
  p.kernel = Tensor::leaf({out_ch, in_ch, 3, 3}, true);
  const double std = std::sqrt(2.0 / (in_ch * 9.0));
  for (auto& v : p.kernel->values) v = rng.normal() * std;
  p.bias = Tensor::leaf({out_ch}, true);
  p.bn_gamma = Tensor::leaf({out_ch}, true);
  p.bn_gamma->fill(1.0);
  p.bn_beta = Tensor::leaf({out_ch}, true);
  p.bn_mean.assign(static_cast<std::size_t>(out_ch), 0.0);
  p.bn_var.assign(static_cast<std::size_t>(out_ch), 1.0);
  p.pool_t = pool_t;
  p.pool_f = pool_f;
  return p;
}

TensorPtr conv_block_forward(const TensorPtr& x, ConvBlockParams& p,
                             bool train_mode) {
  if (x->ndim() != 4) throw ShapeError("conv_block: input must be [N,C,T,F]");
  const int n = x->dim(0), cin = x->dim(1), t_dim = x->dim(2), f_dim = x->dim(3);
  if (cin != p.in_channels()) {
    throw ShapeError("conv_block: input channels " + std::to_string(cin) +
                     " do not match kernel " + std::to_string(p.in_channels()));
  }
  if (p.pool_t > 1 && t_dim % p.pool_t != 0) {
    throw ShapeError("conv_block: T=" + std::to_string(t_dim) +
                     " not divisible by pool " + std::to_string(p.pool_t));
  }
  if (p.pool_f > 1 && f_dim % p.pool_f != 0) {
    throw ShapeError("conv_block: F=" + std::to_string(f_dim) +
                     " not divisible by pool " + std::to_string(p.pool_f));
  }
  for (double v : p.bn_var) {
    if (!(v > 0.0)) throw ShapeError("conv_block: running bn_var must stay positive");
  }

  const int cout = p.out_channels();
  const std::int64_t tf = static_cast<std::int64_t>(t_dim) * f_dim;
  const std::int64_t rows = static_cast<std::int64_t>(cin) * 9;
  const std::int64_t in_stride = static_cast<std::int64_t>(cin) * tf;
  const std::int64_t z_stride = static_cast<std::int64_t>(cout) * tf;

  // Conv + bias.
  auto z = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n) * static_cast<std::size_t>(z_stride));
#pragma omp parallel for schedule(static)
  for (int s = 0; s < n; ++s) {
    std::vector<double> cols(static_cast<std::size_t>(rows * tf));
    im2col_3x3(x->values.data() + s * in_stride, cin, t_dim, f_dim, cols.data());
    CMapRM k_mat(p.kernel->values.data(), cout, rows);
    CMapRM c_mat(cols.data(), rows, tf);
    MapRM z_mat(z->data() + s * z_stride, cout, tf);
    z_mat.noalias() = k_mat * c_mat;
    for (int c = 0; c < cout; ++c) {
      z_mat.row(c).array() += p.bias->values[static_cast<std::size_t>(c)];
    }
  }

  // Batch norm statistics.
  const std::int64_t m_per_ch = static_cast<std::int64_t>(n) * tf;
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(cout));
  auto var = std::make_shared<std::vector<double>>(static_cast<std::size_t>(cout));
  if (train_mode) {
    for (int c = 0; c < cout; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int s = 0; s < n; ++s) {
        const double* zc = z->data() + s * z_stride + c * tf;
        for (std::int64_t i = 0; i < tf; ++i) {
          sum += zc[i];
          sq += zc[i] * zc[i];
        }
      }
      const double mu = sum / static_cast<double>(m_per_ch);
      (*mean)[static_cast<std::size_t>(c)] = mu;
      (*var)[static_cast<std::size_t>(c)] =
          std::max(0.0, sq / static_cast<double>(m_per_ch) - mu * mu);
    }
    for (int c = 0; c < cout; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      p.bn_mean[ci] = p.bn_momentum * p.bn_mean[ci] + (1.0 - p.bn_momentum) * (*mean)[ci];
      p.bn_var[ci] = p.bn_momentum * p.bn_var[ci] + (1.0 - p.bn_momentum) * (*var)[ci];
    }
  } else {
    *mean = p.bn_mean;
    *var = p.bn_var;
  }

  // Normalize + ReLU + max pool in one pass per sample.
  const int t_out = t_dim / p.pool_t, f_out = f_dim / p.pool_f;
  const std::int64_t tf_out = static_cast<std::int64_t>(t_out) * f_out;
  const std::int64_t out_stride = static_cast<std::int64_t>(cout) * tf_out;
  auto out = Tensor::leaf({n, cout, t_out, f_out});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(n) * static_cast<std::size_t>(out_stride));
  const int pool_t = p.pool_t, pool_f = p.pool_f;
  const double bn_eps = p.bn_eps;
  std::vector<std::uint64_t> sig_acc(static_cast<std::size_t>(n), 0);

#pragma omp parallel for schedule(static)
  for (int s = 0; s < n; ++s) {
    std::uint64_t sig = 1469598103934665603ULL;
    std::vector<double> act(static_cast<std::size_t>(tf));
    for (int c = 0; c < cout; ++c) {
      const double mu = (*mean)[static_cast<std::size_t>(c)];
      const double inv = 1.0 / std::sqrt((*var)[static_cast<std::size_t>(c)] + bn_eps);
      const double g = p.bn_gamma->values[static_cast<std::size_t>(c)];
      const double b = p.bn_beta->values[static_cast<std::size_t>(c)];
      const double* zc = z->data() + s * z_stride + c * tf;
      std::uint64_t word = 0;
      int fill = 0;
      for (std::int64_t i = 0; i < tf; ++i) {
        const double y = g * (zc[i] - mu) * inv + b;
        const bool pos = y > 0.0;
        act[static_cast<std::size_t>(i)] = pos ? y : 0.0;
        word = (word << 1) | static_cast<std::uint64_t>(pos);
        if (++fill == 64) {
          sig = (sig ^ word) * 1099511628211ULL;
          word = 0;
          fill = 0;
        }
      }
      if (fill > 0) sig = (sig ^ word) * 1099511628211ULL;

      double* oc = out->values.data() + s * out_stride + c * tf_out;
      std::int32_t* ac = argmax->data() + s * out_stride + c * tf_out;
      for (int to = 0; to < t_out; ++to) {
        for (int fo = 0; fo < f_out; ++fo) {
          double best = -1.0;  // activations are >= 0
          std::int32_t best_idx = -1;
          for (int dt = 0; dt < pool_t; ++dt) {
            const std::int64_t base = static_cast<std::int64_t>(to * pool_t + dt) * f_dim;
            for (int df = 0; df < pool_f; ++df) {
              const std::int64_t idx = base + fo * pool_f + df;
              const double v = act[static_cast<std::size_t>(idx)];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(idx);
              }
            }
          }
          oc[static_cast<std::int64_t>(to) * f_out + fo] = best;
          ac[static_cast<std::int64_t>(to) * f_out + fo] = best_idx;
          sig = (sig ^ static_cast<std::uint64_t>(best_idx)) * 1099511628211ULL;
        }
      }
    }
    sig_acc[static_cast<std::size_t>(s)] = sig;
  }
  for (std::uint64_t sig : sig_acc) signature_mix(sig);

  if (!grad_enabled()) return out;

  out->parents = {x, p.kernel, p.bias, p.bn_gamma, p.bn_beta};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  ConvBlockParams* pp = &p;
  out->backward_fn = [out_raw, x_raw, pp, z, mean, var, argmax, n, cin, cout,
                      t_dim, f_dim, tf, tf_out, t_out, f_out, rows, in_stride,
                      z_stride, out_stride, train_mode]() {
    const double* dout = out_raw->grad.data();
    const double bn_eps = pp->bn_eps;
    const std::int64_t m_per_ch = static_cast<std::int64_t>(n) * tf;

    // Unpool + ReLU mask + BN backward, producing dz.
    std::vector<double> dz(static_cast<std::size_t>(n) * static_cast<std::size_t>(z_stride), 0.0);
    std::vector<double> dgamma(static_cast<std::size_t>(cout), 0.0);
    std::vector<double> dbeta(static_cast<std::size_t>(cout), 0.0);
    std::vector<double> dbias(static_cast<std::size_t>(cout), 0.0);

    for (int c = 0; c < cout; ++c) {
      const double mu = (*mean)[static_cast<std::size_t>(c)];
      const double inv = 1.0 / std::sqrt((*var)[static_cast<std::size_t>(c)] + bn_eps);
      const double g = pp->bn_gamma->values[static_cast<std::size_t>(c)];
      const double b = pp->bn_beta->values[static_cast<std::size_t>(c)];
      double sum_dxh = 0.0, sum_dxh_xh = 0.0, dg = 0.0, db = 0.0;

      // First pass: route pooled grads, apply ReLU mask, collect BN sums.
      for (int s = 0; s < n; ++s) {
        const double* zc = z->data() + s * z_stride + c * tf;
        double* dzc = dz.data() + s * z_stride + c * tf;
        const double* doc = dout + s * out_stride + c * tf_out;
        const std::int32_t* ac = argmax->data() + s * out_stride + c * tf_out;
        for (std::int64_t i = 0; i < tf_out; ++i) {
          const std::int32_t idx = ac[i];
          const double xh = (zc[idx] - mu) * inv;
          const double y = g * xh + b;
          if (y <= 0.0) continue;
          const double dy = doc[i];
          dg += dy * xh;
          db += dy;
          const double dxh = dy * g;
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
          dzc[idx] += dxh;  // holds dxhat until the second pass
        }
      }
      dgamma[static_cast<std::size_t>(c)] += dg;
      dbeta[static_cast<std::size_t>(c)] += db;

      const double mean_dxh = sum_dxh / static_cast<double>(m_per_ch);
      const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(m_per_ch);
      double dbias_c = 0.0;
      for (int s = 0; s < n; ++s) {
        const double* zc = z->data() + s * z_stride + c * tf;
        double* dzc = dz.data() + s * z_stride + c * tf;
        if (train_mode) {
          for (std::int64_t i = 0; i < tf; ++i) {
            const double xh = (zc[i] - mu) * inv;
            dzc[i] = inv * (dzc[i] - mean_dxh - xh * mean_dxh_xh);
            dbias_c += dzc[i];
          }
        } else {
          for (std::int64_t i = 0; i < tf; ++i) {
            dzc[i] *= inv;
            dbias_c += dzc[i];
          }
        }
      }
      dbias[static_cast<std::size_t>(c)] += dbias_c;
    }

    if (!pp->bn_gamma->grad.empty()) add_into(pp->bn_gamma->grad, dgamma.data(), dgamma.size());
    if (!pp->bn_beta->grad.empty()) add_into(pp->bn_beta->grad, dbeta.data(), dbeta.size());
    if (!pp->bias->grad.empty()) add_into(pp->bias->grad, dbias.data(), dbias.size());

    // Conv backward: per-sample weight grads into slots, then an ordered
    // reduce so results do not depend on thread count.
    const bool need_dx = !x_raw->grad.empty();
    const bool need_dw = !pp->kernel->grad.empty();
    std::vector<double> dw_slots;
    if (need_dw) {
      dw_slots.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(cout * rows), 0.0);
    }
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n; ++s) {
      std::vector<double> cols(static_cast<std::size_t>(rows * tf));
      im2col_3x3(x_raw->values.data() + s * in_stride, cin, t_dim, f_dim, cols.data());
      CMapRM dz_mat(dz.data() + s * z_stride, cout, tf);
      if (need_dw) {
        CMapRM c_mat(cols.data(), rows, tf);
        MapRM dw_mat(dw_slots.data() + static_cast<std::int64_t>(s) * cout * rows, cout, rows);
        dw_mat.noalias() = dz_mat * c_mat.transpose();
      }
      if (need_dx) {
        CMapRM k_mat(pp->kernel->values.data(), cout, rows);
        MapRM dcols(cols.data(), rows, tf);  // reuse the buffer
        dcols.noalias() = k_mat.transpose() * dz_mat;
        col2im_3x3(cols.data(), cin, t_dim, f_dim, x_raw->grad.data() + s * in_stride);
      }
    }
    if (need_dw) {
      for (int s = 0; s < n; ++s) {
        add_into(pp->kernel->grad, dw_slots.data() + static_cast<std::int64_t>(s) * cout * rows,
                 static_cast<std::size_t>(cout * rows));
      }
    }
  };
  return out;
}

GruParams GruParams::make(int input_size, int hidden_size, Rng& rng) {
  GruParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  for (int d = 0; d < 2; ++d) {
    p.dir[d].w_ih = Tensor::leaf({3 * hidden_size, input_size}, true);
    p.dir[d].w_hh = Tensor::leaf({3 * hidden_size, hidden_size}, true);
    p.dir[d].b_ih = Tensor::leaf({3 * hidden_size}, true);
    p.dir[d].b_hh = Tensor::leaf({3 * hidden_size}, true);
    for (auto* t : {&p.dir[d].w_ih, &p.dir[d].w_hh, &p.dir[d].b_ih, &p.dir[d].b_hh}) {
      for (auto& v : (*t)->values) v = rng.uniform(-k, k);
    }
  }
  return p;
}

namespace {

/// Per-direction forward cache for BPTT.
struct GruTrace {
  std::vector<double> gin;   // [N*T, 3H] input projection + b_ih
  std::vector<double> r, z, nc, q;  // [T][N,H] each
  std::vector<double> h;     // [T+1][N,H], h[0] is the zero initial state
};

void gru_direction_forward(const double* x, int n, int t_len, int d_in, int h_dim,
                           const GruDirectionParams& dp, bool reversed,
                           GruTrace* trace, double* out, int out_stride,
                           int out_offset) {
  const int h3 = 3 * h_dim;
  trace->gin.resize(static_cast<std::size_t>(n) * t_len * h3);
  trace->r.assign(static_cast<std::size_t>(t_len) * n * h_dim, 0.0);
  trace->z.assign(static_cast<std::size_t>(t_len) * n * h_dim, 0.0);
  trace->nc.assign(static_cast<std::size_t>(t_len) * n * h_dim, 0.0);
  trace->q.assign(static_cast<std::size_t>(t_len) * n * h_dim, 0.0);
  trace->h.assign(static_cast<std::size_t>(t_len + 1) * n * h_dim, 0.0);

  CMapRM x_mat(x, static_cast<std::int64_t>(n) * t_len, d_in);
  CMapRM w_ih(dp.w_ih->values.data(), h3, d_in);
  MapRM gin(trace->gin.data(), static_cast<std::int64_t>(n) * t_len, h3);
  gin.noalias() = x_mat * w_ih.transpose();
  for (std::int64_t row = 0; row < gin.rows(); ++row) {
    for (int j = 0; j < h3; ++j) gin(row, j) += dp.b_ih->values[static_cast<std::size_t>(j)];
  }

  CMapRM w_hh(dp.w_hh->values.data(), h3, h_dim);
  RowMat grec(n, h3);
  const std::int64_t nh = static_cast<std::int64_t>(n) * h_dim;
  for (int step = 0; step < t_len; ++step) {
    const int t = reversed ? (t_len - 1 - step) : step;
    MapRM h_prev(trace->h.data() + static_cast<std::int64_t>(step) * nh, n, h_dim);
    MapRM h_curr(trace->h.data() + static_cast<std::int64_t>(step + 1) * nh, n, h_dim);
    grec.noalias() = h_prev * w_hh.transpose();
    double* r_t = trace->r.data() + static_cast<std::int64_t>(step) * nh;
    double* z_t = trace->z.data() + static_cast<std::int64_t>(step) * nh;
    double* n_t = trace->nc.data() + static_cast<std::int64_t>(step) * nh;
    double* q_t = trace->q.data() + static_cast<std::int64_t>(step) * nh;
    for (int s = 0; s < n; ++s) {
      const double* gi = trace->gin.data() +
                         (static_cast<std::int64_t>(s) * t_len + t) * h3;
      for (int j = 0; j < h_dim; ++j) {
        const double q = grec(s, 2 * h_dim + j) + dp.b_hh->values[static_cast<std::size_t>(2 * h_dim + j)];
        const double r = sigmoid(gi[j] + grec(s, j) + dp.b_hh->values[static_cast<std::size_t>(j)]);
        const double zz = sigmoid(gi[h_dim + j] + grec(s, h_dim + j) +
                                  dp.b_hh->values[static_cast<std::size_t>(h_dim + j)]);
        const double nc = std::tanh(gi[2 * h_dim + j] + r * q);
        const double h = (1.0 - zz) * nc + zz * h_prev(s, j);
        r_t[static_cast<std::int64_t>(s) * h_dim + j] = r;
        z_t[static_cast<std::int64_t>(s) * h_dim + j] = zz;
        n_t[static_cast<std::int64_t>(s) * h_dim + j] = nc;
        q_t[static_cast<std::int64_t>(s) * h_dim + j] = q;
        h_curr(s, j) = h;
        out[(static_cast<std::int64_t>(s) * t_len + t) * out_stride + out_offset + j] = h;
      }
    }
  }
}

void gru_direction_backward(const double* x, const double* dout, int n, int t_len,
                            int d_in, int h_dim, const GruDirectionParams& dp,
                            bool reversed, const GruTrace& trace, double* dx,
                            int out_stride, int out_offset) {
  const int h3 = 3 * h_dim;
  const std::int64_t nh = static_cast<std::int64_t>(n) * h_dim;
  std::vector<double> dgin(static_cast<std::size_t>(n) * t_len * h3, 0.0);
  RowMat dh = RowMat::Zero(n, h_dim);
  RowMat dgrec(n, h3);
  RowMat dw_hh = RowMat::Zero(h3, h_dim);
  Eigen::VectorXd db_hh = Eigen::VectorXd::Zero(h3);
  CMapRM w_hh(dp.w_hh->values.data(), h3, h_dim);

  for (int step = t_len - 1; step >= 0; --step) {
    const int t = reversed ? (t_len - 1 - step) : step;
    CMapRM h_prev(trace.h.data() + static_cast<std::int64_t>(step) * nh, n, h_dim);
    const double* r_t = trace.r.data() + static_cast<std::int64_t>(step) * nh;
    const double* z_t = trace.z.data() + static_cast<std::int64_t>(step) * nh;
    const double* n_t = trace.nc.data() + static_cast<std::int64_t>(step) * nh;
    const double* q_t = trace.q.data() + static_cast<std::int64_t>(step) * nh;

    for (int s = 0; s < n; ++s) {
      double* dgi = dgin.data() + (static_cast<std::int64_t>(s) * t_len + t) * h3;
      for (int j = 0; j < h_dim; ++j) {
        const std::int64_t sj = static_cast<std::int64_t>(s) * h_dim + j;
        const double dh_sj =
            dh(s, j) + dout[(static_cast<std::int64_t>(s) * t_len + t) * out_stride +
                            out_offset + j];
        const double r = r_t[sj], zz = z_t[sj], nc = n_t[sj], q = q_t[sj];
        const double dnc = dh_sj * (1.0 - zz);
        const double dz = dh_sj * (h_prev(s, j) - nc);
        const double dan = dnc * (1.0 - nc * nc);
        const double dr = dan * q;
        const double dq = dan * r;
        const double daz = dz * zz * (1.0 - zz);
        const double dar = dr * r * (1.0 - r);
        dgi[j] = dar;
        dgi[h_dim + j] = daz;
        dgi[2 * h_dim + j] = dan;
        dgrec(s, j) = dar;
        dgrec(s, h_dim + j) = daz;
        dgrec(s, 2 * h_dim + j) = dq;
        dh(s, j) = dh_sj * zz;  // carry to h_{t-1}
      }
    }
    dw_hh.noalias() += dgrec.transpose() * h_prev;
    db_hh.noalias() += dgrec.colwise().sum().transpose();
    dh.noalias() += dgrec * w_hh;
  }

  CMapRM x_mat(x, static_cast<std::int64_t>(n) * t_len, d_in);
  CMapRM dgin_mat(dgin.data(), static_cast<std::int64_t>(n) * t_len, h3);
  if (!dp.w_ih->grad.empty()) {
    MapRM g(dp.w_ih->grad.data(), h3, d_in);
    g.noalias() += dgin_mat.transpose() * x_mat;
  }
  if (!dp.b_ih->grad.empty()) {
    Eigen::Map<Eigen::VectorXd> g(dp.b_ih->grad.data(), h3);
    g.noalias() += dgin_mat.colwise().sum().transpose();
  }
  if (!dp.w_hh->grad.empty()) {
    MapRM g(dp.w_hh->grad.data(), h3, h_dim);
    g += dw_hh;
  }
  if (!dp.b_hh->grad.empty()) {
    Eigen::Map<Eigen::VectorXd> g(dp.b_hh->grad.data(), h3);
    g += db_hh;
  }
  if (dx != nullptr) {
    CMapRM w_ih(dp.w_ih->values.data(), h3, d_in);
    MapRM dx_mat(dx, static_cast<std::int64_t>(n) * t_len, d_in);
    dx_mat.noalias() += dgin_mat * w_ih;
  }
}

}  // namespace

TensorPtr bigru_forward(const TensorPtr& x, const GruParams& p) {
  if (x->ndim() != 3) throw ShapeError("bigru: input must be [N,T,D]");
  const int n = x->dim(0), t_len = x->dim(1), d_in = x->dim(2);
  if (t_len == 0) throw ShapeError("bigru: empty sequence (T=0)");
  if (d_in != p.input_size) {
    throw ShapeError("bigru: input dim " + std::to_string(d_in) +
                     " does not match params " + std::to_string(p.input_size));
  }
  const int h_dim = p.hidden_size;
  auto out = Tensor::leaf({n, t_len, 2 * h_dim});

  auto traces = std::make_shared<std::array<GruTrace, 2>>();
  for (int d = 0; d < 2; ++d) {
    gru_direction_forward(x->values.data(), n, t_len, d_in, h_dim, p.dir[d],
                          d == 1, &(*traces)[static_cast<std::size_t>(d)],
                          out->values.data(), 2 * h_dim, d * h_dim);
  }

  if (!grad_enabled()) return out;

  out->parents = {x,
                  p.dir[0].w_ih, p.dir[0].w_hh, p.dir[0].b_ih, p.dir[0].b_hh,
                  p.dir[1].w_ih, p.dir[1].w_hh, p.dir[1].b_ih, p.dir[1].b_hh};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  const GruParams* pp = &p;
  out->backward_fn = [out_raw, x_raw, pp, traces, n, t_len, d_in, h_dim]() {
    double* dx = x_raw->grad.empty() ? nullptr : x_raw->grad.data();
    for (int d = 0; d < 2; ++d) {
      gru_direction_backward(x_raw->values.data(), out_raw->grad.data(), n, t_len,
                             d_in, h_dim, pp->dir[d], d == 1,
                             (*traces)[static_cast<std::size_t>(d)], dx,
                             2 * h_dim, d * h_dim);
    }
  };
  return out;
}

TensorPtr linear_forward(const TensorPtr& x, const TensorPtr& w,
                         const TensorPtr& b) {
  if (w->ndim() != 2) throw ShapeError("linear: weight must be [D,K]");
  const int d_in = w->dim(0), k_out = w->dim(1);
  if (x->ndim() < 1 || x->shape.back() != d_in) {
    throw ShapeError("linear: input last dim does not match weight rows");
  }
  if (b->size() != k_out) throw ShapeError("linear: bias size mismatch");

  const std::int64_t m = x->size() / d_in;
  std::vector<int> out_shape = x->shape;
  out_shape.back() = k_out;
  auto out = Tensor::leaf(std::move(out_shape));
  CMapRM x_mat(x->values.data(), m, d_in);
  CMapRM w_mat(w->values.data(), d_in, k_out);
  MapRM o_mat(out->values.data(), m, k_out);
  o_mat.noalias() = x_mat * w_mat;
  for (std::int64_t row = 0; row < m; ++row) {
    for (int j = 0; j < k_out; ++j) o_mat(row, j) += b->values[static_cast<std::size_t>(j)];
  }

  if (!grad_enabled()) return out;

  out->parents = {x, w, b};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  Tensor* w_raw = w.get();
  Tensor* b_raw = b.get();
  out->backward_fn = [out_raw, x_raw, w_raw, b_raw, m, d_in, k_out]() {
    CMapRM dout(out_raw->grad.data(), m, k_out);
    if (!x_raw->grad.empty()) {
      CMapRM w_mat(w_raw->values.data(), d_in, k_out);
      MapRM dx(x_raw->grad.data(), m, d_in);
      dx.noalias() += dout * w_mat.transpose();
    }
    if (!w_raw->grad.empty()) {
      CMapRM x_mat(x_raw->values.data(), m, d_in);
      MapRM dw(w_raw->grad.data(), d_in, k_out);
      dw.noalias() += x_mat.transpose() * dout;
    }
    if (!b_raw->grad.empty()) {
      Eigen::Map<Eigen::VectorXd> db(b_raw->grad.data(), k_out);
      db.noalias() += dout.colwise().sum().transpose();
    }
  };
  return out;
}

namespace {

TensorPtr elementwise_unary(const TensorPtr& x, double (*fwd)(double),
                            double (*dfn)(double /*out*/)) {
  auto out = Tensor::leaf(x->shape);
  for (std::size_t i = 0; i < x->values.size(); ++i) out->values[i] = fwd(x->values[i]);
  if (!grad_enabled()) return out;
  out->parents = {x};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  out->backward_fn = [out_raw, x_raw, dfn]() {
    if (x_raw->grad.empty()) return;
    for (std::size_t i = 0; i < x_raw->grad.size(); ++i) {
      x_raw->grad[i] += out_raw->grad[i] * dfn(out_raw->values[i]);
    }
  };
  return out;
}

}  // namespace

TensorPtr sigmoid_op(const TensorPtr& x) {
  return elementwise_unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double o) { return o * (1.0 - o); });
}

TensorPtr tanh_op(const TensorPtr& x) {
  return elementwise_unary(x, [](double v) { return std::tanh(v); },
                           [](double o) { return 1.0 - o * o; });
}

TensorPtr mean_over_freq(const TensorPtr& x) {
  if (x->ndim() != 4) throw ShapeError("mean_over_freq: input must be [N,C,T,F]");
  const int n = x->dim(0), c_dim = x->dim(1), t_dim = x->dim(2), f_dim = x->dim(3);
  auto out = Tensor::leaf({n, t_dim, c_dim});
  const double inv_f = 1.0 / f_dim;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < c_dim; ++c) {
      for (int t = 0; t < t_dim; ++t) {
        const double* src = x->values.data() +
                            ((static_cast<std::int64_t>(s) * c_dim + c) * t_dim + t) * f_dim;
        double sum = 0.0;
        for (int f = 0; f < f_dim; ++f) sum += src[f];
        out->values[(static_cast<std::int64_t>(s) * t_dim + t) * c_dim + c] = sum * inv_f;
      }
    }
  }
  if (!grad_enabled()) return out;
  out->parents = {x};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  out->backward_fn = [out_raw, x_raw, n, c_dim, t_dim, f_dim, inv_f]() {
    if (x_raw->grad.empty()) return;
    for (int s = 0; s < n; ++s) {
      for (int c = 0; c < c_dim; ++c) {
        for (int t = 0; t < t_dim; ++t) {
          const double g =
              out_raw->grad[(static_cast<std::int64_t>(s) * t_dim + t) * c_dim + c] * inv_f;
          double* dst = x_raw->grad.data() +
                        ((static_cast<std::int64_t>(s) * c_dim + c) * t_dim + t) * f_dim;
          for (int f = 0; f < f_dim; ++f) dst[f] += g;
        }
      }
    }
  };
  return out;
}

TensorPtr upsample_time2(const TensorPtr& x) {
  if (x->ndim() != 3) throw ShapeError("upsample_time2: input must be [N,T,K]");
  const int n = x->dim(0), t_len = x->dim(1), k_dim = x->dim(2);
  auto out = Tensor::leaf({n, 2 * t_len, k_dim});
  for (int s = 0; s < n; ++s) {
    for (int t = 0; t < t_len; ++t) {
      const double* src =
          x->values.data() + (static_cast<std::int64_t>(s) * t_len + t) * k_dim;
      double* d0 = out->values.data() +
                   (static_cast<std::int64_t>(s) * 2 * t_len + 2 * t) * k_dim;
      std::memcpy(d0, src, sizeof(double) * static_cast<std::size_t>(k_dim));
      std::memcpy(d0 + k_dim, src, sizeof(double) * static_cast<std::size_t>(k_dim));
    }
  }
  if (!grad_enabled()) return out;
  out->parents = {x};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  out->backward_fn = [out_raw, x_raw, n, t_len, k_dim]() {
    if (x_raw->grad.empty()) return;
    for (int s = 0; s < n; ++s) {
      for (int t = 0; t < t_len; ++t) {
        double* dst = x_raw->grad.data() + (static_cast<std::int64_t>(s) * t_len + t) * k_dim;
        const double* g0 = out_raw->grad.data() +
                           (static_cast<std::int64_t>(s) * 2 * t_len + 2 * t) * k_dim;
        for (int k = 0; k < k_dim; ++k) dst[k] += g0[k] + g0[k_dim + k];
      }
    }
  };
  return out;
}

TensorPtr reshape(const TensorPtr& x, std::vector<int> shape) {
  if (shape_size(shape) != x->size()) throw ShapeError("reshape: element count mismatch");
  auto out = Tensor::from(std::move(shape), x->values);
  if (!grad_enabled()) return out;
  out->parents = {x};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  out->backward_fn = [out_raw, x_raw]() {
    if (x_raw->grad.empty()) return;
    add_into(x_raw->grad, out_raw->grad.data(), out_raw->grad.size());
  };
  return out;
}

TensorPtr add_weighted(const TensorPtr& a, double wa, const TensorPtr& b,
                       double wb) {
  if (a->shape != b->shape) throw ShapeError("add_weighted: shape mismatch");
  auto out = Tensor::leaf(a->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    out->values[i] = wa * a->values[i] + wb * b->values[i];
  }
  if (!grad_enabled()) return out;
  out->parents = {a, b};
  Tensor* out_raw = out.get();
  Tensor* a_raw = a.get();
  Tensor* b_raw = b.get();
  out->backward_fn = [out_raw, a_raw, b_raw, wa, wb]() {
    if (!a_raw->grad.empty()) {
      for (std::size_t i = 0; i < a_raw->grad.size(); ++i) {
        a_raw->grad[i] += wa * out_raw->grad[i];
      }
    }
    if (!b_raw->grad.empty()) {
      for (std::size_t i = 0; i < b_raw->grad.size(); ++i) {
        b_raw->grad[i] += wb * out_raw->grad[i];
      }
    }
  };
  return out;
}

TensorPtr sum_all(const TensorPtr& x) {
  auto out = Tensor::leaf({1});
  double sum = 0.0;
  for (double v : x->values) sum += v;
  out->values[0] = sum;
  if (!grad_enabled()) return out;
  out->parents = {x};
  Tensor* out_raw = out.get();
  Tensor* x_raw = x.get();
  out->backward_fn = [out_raw, x_raw]() {
    if (x_raw->grad.empty()) return;
    const double g = out_raw->grad[0];
    for (auto& v : x_raw->grad) v += g;
  };
  return out;
}

TensorPtr bce_loss(const TensorPtr& probs, std::span<const double> targets) {
  if (static_cast<std::size_t>(probs->size()) != targets.size()) {
    throw ShapeError("bce_loss: probs/targets shape mismatch");
  }
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  const std::int64_t m = probs->size();
  auto clamped = std::make_shared<std::vector<double>>(probs->values);
  double loss = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    double& pv = (*clamped)[static_cast<std::size_t>(i)];
    if (pv < kLo) {
      pv = kLo;
      signature_mix(static_cast<std::uint64_t>(i) * 2 + 1);
    } else if (pv > kHi) {
      pv = kHi;
      signature_mix(static_cast<std::uint64_t>(i) * 2 + 2);
    }
    const double y = targets[static_cast<std::size_t>(i)];
    loss -= y * std::log(pv) + (1.0 - y) * std::log(1.0 - pv);
  }
  auto out = Tensor::scalar(loss / static_cast<double>(m));
  if (!grad_enabled()) return out;
  out->parents = {probs};
  Tensor* out_raw = out.get();
  Tensor* p_raw = probs.get();
  std::vector<double> tgt(targets.begin(), targets.end());
  out->backward_fn = [out_raw, p_raw, clamped, tgt = std::move(tgt), m]() {
    if (p_raw->grad.empty()) return;
    const double g = out_raw->grad[0] / static_cast<double>(m);
    for (std::int64_t i = 0; i < m; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      const double p = (*clamped)[ii];
      if (p_raw->values[ii] < 1e-7 || p_raw->values[ii] > 1.0 - 1e-7) continue;
      p_raw->grad[ii] += g * (-(tgt[ii] / p) + (1.0 - tgt[ii]) / (1.0 - p));
    }
  };
  return out;
}

TensorPtr masked_mse_loss(const TensorPtr& pred, std::span<const double> target,
                          std::span<const double> mask) {
  if (static_cast<std::size_t>(pred->size()) != target.size() ||
      target.size() != mask.size()) {
    throw ShapeError("masked_mse_loss: shape mismatch");
  }
  double count = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) {
      const double d = pred->values[i] - target[i];
      sq += d * d;
      count += 1.0;
    }
  }
  if (count == 0.0) return Tensor::scalar(0.0);

  auto out = Tensor::scalar(sq / count);
  if (!grad_enabled()) return out;
  out->parents = {pred};
  Tensor* out_raw = out.get();
  Tensor* p_raw = pred.get();
  std::vector<double> tgt(target.begin(), target.end());
  std::vector<double> msk(mask.begin(), mask.end());
  out->backward_fn = [out_raw, p_raw, tgt = std::move(tgt), msk = std::move(msk),
                      count]() {
    if (p_raw->grad.empty()) return;
    const double g = out_raw->grad[0] * 2.0 / count;
    for (std::size_t i = 0; i < msk.size(); ++i) {
      if (msk[i] != 0.0) p_raw->grad[i] += g * (p_raw->values[i] - tgt[i]);
    }
  };
  return out;
}

}  // namespace seldkit::nn
