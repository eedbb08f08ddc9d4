// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "seldkit/adam.hpp"
#include "seldkit/checkpoint.hpp"
#include "seldkit/gradcheck.hpp"
#include "seldkit/layers.hpp"
#include "seldkit/tensor.hpp"

using namespace seldkit;
using namespace seldkit::nn;

namespace {

TensorPtr random_leaf(std::vector<int> shape, Rng& rng, bool requires_grad,
                      double scale = 1.0) {
  auto t = Tensor::leaf(std::move(shape), requires_grad);
  for (auto& v : t->values) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("backward on a small composite graph matches hand math") {
  auto x = Tensor::from({2}, {0.5, -1.25}, true);
  auto w = Tensor::from({2, 2}, {1.0, 2.0, 3.0, -1.0}, true);
  auto b = Tensor::from({2}, {0.1, -0.2}, true);
  auto y = linear_forward(x, w, b);
  auto s = sum_all(y);
  backward(s);
  // d(sum)/dx_j = sum_k w[j][k]
  CHECK(x->grad[0] == doctest::Approx(3.0));
  CHECK(x->grad[1] == doctest::Approx(2.0));
  CHECK(w->grad[0] == doctest::Approx(0.5));
  CHECK(w->grad[2] == doctest::Approx(-1.25));
  CHECK(b->grad[0] == doctest::Approx(1.0));
}

TEST_CASE("grad_check is near-exact for a quadratic loss") {
  Rng rng(7);
  auto x = random_leaf({5}, rng, true);
  auto report = grad_check(
      [&]() {
        auto w = Tensor::from({5, 1}, {1.0, -2.0, 0.5, 3.0, 1.5});
        auto b = Tensor::from({1}, {0.0});
        auto y = linear_forward(x, w, b);
        // loss = (w.x)^2 via sum(y)*sum(y) is unavailable; use mse against 0
        std::vector<double> zero(1, 0.0), one(1, 1.0);
        return masked_mse_loss(y, zero, one);
      },
      {x}, 1e-5);
  CHECK(report.coords_checked == 5);
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("linear identity and zero-weight broadcast") {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto zero_b = Tensor::leaf({3});
  auto y = linear_forward(x, eye, zero_b);
  for (int i = 0; i < 6; ++i) CHECK(y->values[i] == doctest::Approx(x->values[i]));

  auto zero_w = Tensor::leaf({3, 2});
  auto b = Tensor::from({2}, {0.7, -0.3});
  auto z = linear_forward(x, zero_w, b);
  for (int r = 0; r < 2; ++r) {
    CHECK(z->values[2 * r] == doctest::Approx(0.7));
    CHECK(z->values[2 * r + 1] == doctest::Approx(-0.3));
  }

  CHECK_THROWS_AS(linear_forward(x, Tensor::leaf({4, 2}), b), ShapeError);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(11);
  auto x = random_leaf({3, 4}, rng, true);
  auto w = random_leaf({4, 2}, rng, true, 0.5);
  auto b = random_leaf({2}, rng, true, 0.1);
  std::vector<double> target(6, 0.3);
  std::vector<double> mask(6, 1.0);
  auto report = grad_check(
      [&]() { return masked_mse_loss(sigmoid_op(linear_forward(x, w, b)), target, mask); },
      {x, w, b}, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("conv block propagates zeros") {
  Rng rng(3);
  auto p = ConvBlockParams::make(2, 4, 2, 2, rng);
  p.bias->fill(0.0);
  p.bn_beta->fill(0.0);
  auto x = Tensor::leaf({1, 2, 8, 8});
  auto y = conv_block_forward(x, p, /*train_mode=*/true);
  for (double v : y->values) CHECK(v == 0.0);
}

TEST_CASE("conv block output shape matches the halving contract") {
  Rng rng(5);
  auto p = ConvBlockParams::make(4, 64, 2, 2, rng);
  auto x = random_leaf({1, 4, 320, 128}, rng, false);
  auto y = conv_block_forward(x, p, /*train_mode=*/false);
  CHECK(y->shape == std::vector<int>{1, 64, 160, 64});

  // Four stacked blocks divide T and F by 16.
  auto p1 = ConvBlockParams::make(1, 2, 2, 2, rng);
  auto p2 = ConvBlockParams::make(2, 2, 2, 2, rng);
  auto p3 = ConvBlockParams::make(2, 2, 2, 2, rng);
  auto p4 = ConvBlockParams::make(2, 2, 2, 2, rng);
  auto x2 = random_leaf({1, 1, 32, 16}, rng, false);
  auto h = conv_block_forward(x2, p1, false);
  h = conv_block_forward(h, p2, false);
  h = conv_block_forward(h, p3, false);
  h = conv_block_forward(h, p4, false);
  CHECK(h->shape == std::vector<int>{1, 2, 2, 1});
}

TEST_CASE("conv block rejects bad inputs") {
  Rng rng(5);
  auto p = ConvBlockParams::make(2, 4, 2, 2, rng);
  auto odd = Tensor::leaf({1, 2, 7, 8});
  CHECK_THROWS_AS(conv_block_forward(odd, p, false), ShapeError);
  auto wrong_ch = Tensor::leaf({1, 3, 8, 8});
  CHECK_THROWS_AS(conv_block_forward(wrong_ch, p, false), ShapeError);
}

TEST_CASE("conv block gradients match finite differences (train and eval)") {
  Rng rng(13);
  for (const bool train_mode : {true, false}) {
    CAPTURE(train_mode);
    auto p = ConvBlockParams::make(2, 3, 2, 2, rng);
    auto x = random_leaf({2, 2, 4, 4}, rng, true);
    auto report = grad_check(
        [&]() { return sum_all(conv_block_forward(x, p, train_mode)); },
        {x, p.kernel, p.bias, p.bn_gamma, p.bn_beta}, 1e-5);
    CAPTURE(report.worst_coord);
    CHECK(report.coords_checked > 0);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("bigru with zero weights yields zeros") {
  Rng rng(17);
  auto p = GruParams::make(3, 4, rng);
  for (int d = 0; d < 2; ++d) {
    p.dir[d].w_ih->fill(0.0);
    p.dir[d].w_hh->fill(0.0);
    p.dir[d].b_ih->fill(0.0);
    p.dir[d].b_hh->fill(0.0);
  }
  auto x = random_leaf({2, 5, 3}, rng, false);
  auto y = bigru_forward(x, p);
  CHECK(y->shape == std::vector<int>{2, 5, 8});
  for (double v : y->values) CHECK(v == 0.0);
}

TEST_CASE("bigru forward/backward directions agree at T=1 with tied weights") {
  Rng rng(19);
  auto p = GruParams::make(3, 4, rng);
  // Tie the backward direction to the forward one.
  p.dir[1].w_ih->values = p.dir[0].w_ih->values;
  p.dir[1].w_hh->values = p.dir[0].w_hh->values;
  p.dir[1].b_ih->values = p.dir[0].b_ih->values;
  p.dir[1].b_hh->values = p.dir[0].b_hh->values;
  auto x = random_leaf({2, 1, 3}, rng, false);
  auto y = bigru_forward(x, p);
  for (int n = 0; n < 2; ++n) {
    for (int j = 0; j < 4; ++j) {
      CHECK(y->values[n * 8 + j] == doctest::Approx(y->values[n * 8 + 4 + j]));
    }
  }
}

TEST_CASE("bigru rejects empty sequences") {
  Rng rng(23);
  auto p = GruParams::make(3, 4, rng);
  auto x = Tensor::leaf({2, 0, 3});
  CHECK_THROWS_AS(bigru_forward(x, p), ShapeError);
  auto bad = Tensor::leaf({2, 5, 7});
  CHECK_THROWS_AS(bigru_forward(bad, p), ShapeError);
}

TEST_CASE("two-layer bigru gradients match finite differences") {
  Rng rng(29);
  auto p0 = GruParams::make(3, 3, rng);
  auto p1 = GruParams::make(6, 2, rng);
  auto x = random_leaf({2, 4, 3}, rng, true);
  std::vector<TensorPtr> params = {x};
  for (auto* p : {&p0, &p1}) {
    for (int d = 0; d < 2; ++d) {
      params.push_back(p->dir[d].w_ih);
      params.push_back(p->dir[d].w_hh);
      params.push_back(p->dir[d].b_ih);
      params.push_back(p->dir[d].b_hh);
    }
  }
  auto report = grad_check(
      [&]() {
        auto h = bigru_forward(x, p0);
        h = bigru_forward(h, p1);
        auto y = tanh_op(h);
        std::vector<double> target(static_cast<std::size_t>(y->size()), 0.25);
        std::vector<double> mask(static_cast<std::size_t>(y->size()), 1.0);
        return masked_mse_loss(y, target, mask);
      },
      params, 1e-5);
  CAPTURE(report.worst_coord);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("bce loss values") {
  auto p = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5}, true);
  std::vector<double> y = {1, 0, 1, 0};
  auto l = bce_loss(p, y);
  CHECK(l->values[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  auto exact = Tensor::from({4}, {1, 0, 1, 0});
  auto l2 = bce_loss(exact, y);
  CHECK(l2->values[0] <= 1e-6);
  CHECK(l2->values[0] >= 0.0);

  CHECK_THROWS_AS(bce_loss(p, std::vector<double>{1, 0}), ShapeError);
}

TEST_CASE("bce gradients match finite differences") {
  Rng rng(31);
  auto logits = random_leaf({6}, rng, true);
  std::vector<double> y = {1, 0, 1, 1, 0, 0};
  auto report = grad_check([&]() { return bce_loss(sigmoid_op(logits), y); },
                           {logits}, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("masked mse semantics") {
  auto pred = Tensor::from({4}, {1.0, 2.0, 3.0, 4.0}, true);
  std::vector<double> target = {0.0, 0.0, 0.0, 0.0};

  std::vector<double> none(4, 0.0);
  auto l0 = masked_mse_loss(pred, target, none);
  CHECK(l0->values[0] == 0.0);
  pred->zero_grad();
  backward(l0);
  for (double g : pred->grad) CHECK(g == 0.0);

  std::vector<double> all(4, 1.0);
  auto leq = masked_mse_loss(pred, pred->values, all);
  CHECK(leq->values[0] == 0.0);

  // Half mask: mean of 1^2 and 3^2 over the two selected entries.
  std::vector<double> half = {1.0, 0.0, 1.0, 0.0};
  auto lh = masked_mse_loss(pred, target, half);
  CHECK(lh->values[0] == doctest::Approx((1.0 + 9.0) / 2.0));
}

TEST_CASE("masked mse gradients match finite differences") {
  Rng rng(37);
  auto pred = random_leaf({8}, rng, true);
  std::vector<double> target(8, 0.1);
  std::vector<double> mask = {1, 0, 1, 1, 0, 0, 1, 0};
  auto report =
      grad_check([&]() { return masked_mse_loss(pred, target, mask); }, {pred}, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("upsample and mean_over_freq shapes and grads") {
  Rng rng(41);
  auto x = random_leaf({2, 3, 4, 6}, rng, true);
  auto report = grad_check(
      [&]() {
        auto seq = mean_over_freq(x);       // [2,4,3]
        auto up = upsample_time2(seq);      // [2,8,3]
        std::vector<double> t(static_cast<std::size_t>(up->size()), 0.0);
        std::vector<double> m(static_cast<std::size_t>(up->size()), 1.0);
        return masked_mse_loss(up, t, m);
      },
      {x}, 1e-5);
  CHECK(report.max_rel_error < 1e-4);

  auto seq = mean_over_freq(x);
  CHECK(seq->shape == std::vector<int>{2, 4, 3});
  auto up = upsample_time2(seq);
  CHECK(up->shape == std::vector<int>{2, 8, 3});
  for (int n = 0; n < 2; ++n) {
    for (int t = 0; t < 4; ++t) {
      for (int c = 0; c < 3; ++c) {
        const double v = seq->values[(n * 4 + t) * 3 + c];
        CHECK(up->values[(n * 8 + 2 * t) * 3 + c] == doctest::Approx(v));
        CHECK(up->values[(n * 8 + 2 * t + 1) * 3 + c] == doctest::Approx(v));
      }
    }
  }
}

TEST_CASE("relu kink coordinates are excluded, not reported as failures") {
  Rng rng(43);
  auto p = ConvBlockParams::make(1, 1, 1, 1, rng);
  p.bn_gamma->fill(1.0);
  p.bn_beta->fill(0.0);
  // Eval mode with identity stats so a pre-activation sits exactly on the
  // kink for one coordinate.
  p.bn_mean.assign(1, 0.0);
  p.bn_var.assign(1, 1.0 - p.bn_eps);
  p.kernel->fill(0.0);
  p.kernel->values[4] = 1.0;  // center tap: identity conv
  p.bias->fill(0.0);
  auto x = Tensor::from({1, 1, 2, 2}, {0.0, 0.5, -0.5, 0.25}, true);
  auto report = grad_check(
      [&]() { return sum_all(conv_block_forward(x, p, /*train_mode=*/false)); }, {x},
      1e-5);
  CHECK(report.kinks_excluded == 1);  // the exact-zero coordinate
  CHECK(report.coords_checked == 3);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("adam zero-grad step leaves parameters unchanged") {
  Rng rng(47);
  auto w = random_leaf({4}, rng, true);
  const auto before = w->values;
  AdamState state;
  w->zero_grad();
  adam_step({w}, state, 1e-3);
  CHECK(state.step == 1);
  for (int i = 0; i < 4; ++i) CHECK(w->values[i] == before[i]);
}

TEST_CASE("adam first step follows the closed-form update") {
  auto w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  w->zero_grad();
  w->grad = {0.2, -0.4, 1.7};
  AdamState state;
  const double lr = 1e-2;
  adam_step({w}, state, lr);
  // After one step m_hat = g, v_hat = g^2: update = -lr * g / (|g| + eps).
  const double gs[3] = {0.2, -0.4, 1.7};
  const double init[3] = {1.0, -2.0, 0.5};
  for (int i = 0; i < 3; ++i) {
    const double expected = init[i] - lr * gs[i] / (std::abs(gs[i]) + state.eps);
    CHECK(w->values[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adam is deterministic and rejects non-finite gradients") {
  Rng rng(53);
  auto run = [&](std::uint64_t seed) {
    Rng r(seed);
    auto w = random_leaf({6}, r, true);
    AdamState state;
    for (int step = 0; step < 5; ++step) {
      w->zero_grad();
      for (int i = 0; i < 6; ++i) w->grad[i] = 0.1 * (i + 1) * (step + 1);
      adam_step({w}, state, 1e-3);
    }
    return w->values;
  };
  CHECK(run(99) == run(99));

  auto w = random_leaf({2}, rng, true);
  w->zero_grad();
  w->grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState state;
  CHECK_THROWS_AS(adam_step({w}, state, 1e-3), DivergenceError);
}

TEST_CASE("checkpoint round-trips bit-exactly and validates headers") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "seldkit_ckpt_test";
  fs::create_directories(dir);
  const auto path = dir / "model.ckpt";

  Checkpoint ckpt;
  ckpt.kind = "sed";
  ckpt.records.push_back({"conv1.kernel", {2, 1, 3, 3}, std::vector<double>(18, 0.0)});
  Rng rng(61);
  for (auto& v : ckpt.records[0].values) v = rng.normal();
  ckpt.records.push_back({"fc.bias", {4}, {1.0, -0.5, 0.25, 1e-300}});
  save_checkpoint(path, ckpt);

  const auto loaded = load_checkpoint(path);
  CHECK(loaded.kind == "sed");
  REQUIRE(loaded.records.size() == 2);
  CHECK(loaded.records[0].shape == std::vector<int>{2, 1, 3, 3});
  CHECK(loaded.records[0].values == ckpt.records[0].values);
  CHECK(loaded.records[1].values == ckpt.records[1].values);

  // Corrupt magic.
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "NOTAMAGIC";
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
