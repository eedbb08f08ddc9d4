// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numeric>

#include "seldkit/dsp.hpp"
#include "seldkit/feature_cache.hpp"
#include "seldkit/grid.hpp"
#include "seldkit/scene.hpp"

using namespace seldkit;
using namespace seldkit::dsp;

namespace {

std::vector<double> white_noise(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = rng.normal() * 0.25;
  return x;
}

}  // namespace

TEST_CASE("stft frame arithmetic and bin mapping") {
  // 1 s at 24 kHz: floor((24000 - 1024) / 300) + 1 = 77 frames.
  const auto x = white_noise(24000, 1);
  const auto spec = stft(x);
  CHECK(spec.n_frames == 77);
  CHECK(spec.n_bins == 513);

  // Pure 1 kHz sine peaks at bin round(1000 * 1024 / 24000) = 43.
  std::vector<double> sine(24000);
  for (int i = 0; i < 24000; ++i) {
    sine[static_cast<std::size_t>(i)] = std::sin(2.0 * kPi * 1000.0 * i / 24000.0);
  }
  const auto sspec = stft(sine);
  for (int t = 10; t < 12; ++t) {
    int best = 0;
    double best_mag = 0.0;
    for (int b = 0; b < 513; ++b) {
      const double m = std::abs(sspec.at(t, b));
      if (m > best_mag) {
        best_mag = m;
        best = b;
      }
    }
    CHECK(best == 43);
  }

  std::vector<double> zeros(24000, 0.0);
  const auto zspec = stft(zeros);
  for (const auto& v : zspec.data) CHECK(std::abs(v) == 0.0);

  CHECK_THROWS_AS(stft(std::vector<double>(512, 0.0)), ShapeError);
}

TEST_CASE("mel filterbank rows are non-negative with positive sums") {
  for (int n_mels : {64, 128}) {
    const auto fb = MelFilterbank::make(n_mels);
    REQUIRE(fb.n_mels == n_mels);
    const auto dense = fb.dense();
    for (int m = 0; m < n_mels; ++m) {
      double row_sum = 0.0;
      for (int b = 0; b < fb.n_bins; ++b) {
        const double w = dense[static_cast<std::size_t>(m) * fb.n_bins + b];
        CHECK(w >= 0.0);
        row_sum += w;
      }
      CHECK(row_sum > 0.0);
    }
  }
}

TEST_CASE("log mel of silence is ln(1e-10)") {
  std::vector<double> zeros(24000, 0.0);
  const auto f = log_mel({stft(zeros)}, 64);
  CHECK(f.shape == std::vector<int>{1, 77, 64});
  for (double v : f.data) CHECK(v == doctest::Approx(std::log(1e-10)).epsilon(1e-12));
}

TEST_CASE("log mel matches the dense matrix oracle") {
  const auto x = white_noise(24000, 7);
  const auto spec = stft(x);
  const auto fb = MelFilterbank::make(128);
  const auto f = log_mel({spec}, 128);
  const auto dense = fb.dense();
  // Direct dense multiply, independent of the sparse apply path.
  for (int t = 0; t < spec.n_frames; t += 13) {
    for (int m = 0; m < 128; m += 17) {
      double acc = 0.0;
      for (int b = 0; b < 513; ++b) {
        acc += dense[static_cast<std::size_t>(m) * 513 + b] * std::norm(spec.at(t, b));
      }
      const double expected = std::log(acc + 1e-10);
      CHECK(f.data[static_cast<std::size_t>(t) * 128 + m] ==
            doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("intensity vector recovers a plane wave direction") {
  const auto mono = white_noise(24000, 11);
  const auto clip = scene::encode_foa(mono, 0.0, 0.0);
  const auto f = intensity_vector(stft_all(clip));
  REQUIRE(f.shape == std::vector<int>{3, 77, 128});
  const int frames = f.shape[1];
  // Active bands should point at (1, 0, 0) within 1 degree.
  int checked = 0;
  for (int t = 5; t < frames - 5; t += 7) {
    for (int m = 0; m < 128; m += 11) {
      const double ix = f.data[(static_cast<std::size_t>(0) * frames + t) * 128 + m];
      const double iy = f.data[(static_cast<std::size_t>(1) * frames + t) * 128 + m];
      const double iz = f.data[(static_cast<std::size_t>(2) * frames + t) * 128 + m];
      const double norm = std::sqrt(ix * ix + iy * iy + iz * iz);
      if (norm < 0.5) continue;  // inactive band
      const double angle = rad_to_deg(std::acos(std::clamp(ix / norm, -1.0, 1.0)));
      CHECK(angle < 1.0);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("intensity vector is zero when W is silent and rejects bad input") {
  const auto mono = white_noise(24000, 13);
  auto clip = scene::encode_foa(mono, 30.0, 10.0);
  std::fill(clip.channels[0].begin(), clip.channels[0].end(), 0.0);
  const auto f = intensity_vector(stft_all(clip));
  for (double v : f.data) CHECK(v == 0.0);

  clip.channels.pop_back();
  CHECK_THROWS_AS(intensity_vector(stft_all(clip)), ShapeError);
}

TEST_CASE("intensity vector separates two disjoint-band sources") {
  constexpr double kF1 = 500.0, kF2 = 4000.0;
  std::vector<double> s1(24000), s2(24000);
  for (int i = 0; i < 24000; ++i) {
    const double t = static_cast<double>(i) / 24000.0;
    s1[static_cast<std::size_t>(i)] = std::sin(2.0 * kPi * kF1 * t);
    s2[static_cast<std::size_t>(i)] = std::sin(2.0 * kPi * kF2 * t + 0.7);
  }
  const double azi1 = 60.0, ele1 = 20.0, azi2 = -120.0, ele2 = -30.0;
  const auto c1 = scene::encode_foa(s1, azi1, ele1);
  const auto c2 = scene::encode_foa(s2, azi2, ele2);
  MultichannelClip mix;
  mix.channels.resize(4);
  for (int c = 0; c < 4; ++c) {
    mix.channels[static_cast<std::size_t>(c)].resize(24000);
    for (int i = 0; i < 24000; ++i) {
      mix.channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] =
          c1.channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] +
          c2.channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
    }
  }
  const auto f = intensity_vector(stft_all(mix));
  const int frames = f.shape[1];
  const auto fb = MelFilterbank::make(128);

  const auto band_for = [&](double freq) {
    const int bin = static_cast<int>(std::lround(freq * 1024.0 / 24000.0));
    const auto dense = fb.dense();
    int best = 0;
    double best_w = -1.0;
    for (int m = 0; m < 128; ++m) {
      const double w = dense[static_cast<std::size_t>(m) * 513 + bin];
      if (w > best_w) {
        best_w = w;
        best = m;
      }
    }
    return best;
  };
  const auto check_band = [&](int band, double azi, double ele) {
    const auto u = seld::DirectionGrid::unit_vector(azi, ele);
    for (int t = 20; t < frames - 20; t += 9) {
      const double ix = f.data[(static_cast<std::size_t>(0) * frames + t) * 128 + band];
      const double iy = f.data[(static_cast<std::size_t>(1) * frames + t) * 128 + band];
      const double iz = f.data[(static_cast<std::size_t>(2) * frames + t) * 128 + band];
      const double dot = std::clamp(ix * u[0] + iy * u[1] + iz * u[2], -1.0, 1.0);
      CHECK(rad_to_deg(std::acos(dot)) < 5.0);
    }
  };
  check_band(band_for(kF1), azi1, ele1);
  check_band(band_for(kF2), azi2, ele2);
}

TEST_CASE("gcc-phat peak sits at the injected delay") {
  const auto x = white_noise(12000, 19);
  const auto a = stft(x);

  SUBCASE("b equals a: peak at lag 0") {
    const auto out = gcc_phat_pair(a, a);
    for (int t = 3; t < a.n_frames - 3; t += 5) {
      const double* row = out.data() + static_cast<std::size_t>(t) * 128;
      const int peak = static_cast<int>(std::max_element(row, row + 128) - row);
      CHECK(peak == 64);
    }
  }

  SUBCASE("b delayed by 5: peak at +5, matching the time-domain oracle") {
    std::vector<double> delayed(x.size(), 0.0);
    for (std::size_t i = 5; i < x.size(); ++i) delayed[i] = x[i - 5];
    const auto b = stft(delayed);
    const auto out = gcc_phat_pair(a, b);
    std::vector<double> window(1024);
    for (int i = 0; i < 1024; ++i) {
      window[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / 1024.0));
    }
    for (int t = 3; t < a.n_frames - 3; t += 5) {
      const double* row = out.data() + static_cast<std::size_t>(t) * 128;
      const int peak = static_cast<int>(std::max_element(row, row + 128) - row);
      CHECK(peak == 64 + 5);

      // Oracle: direct windowed time-domain cross-correlation argmax.
      const double* xa = x.data() + static_cast<std::size_t>(t) * 300;
      const double* xb = delayed.data() + static_cast<std::size_t>(t) * 300;
      int best_lag = -999;
      double best = -1e300;
      for (int lag = -64; lag < 64; ++lag) {
        double acc = 0.0;
        for (int n = 0; n < 1024; ++n) {
          const int m = n + lag;
          if (m < 0 || m >= 1024) continue;
          acc += xa[n] * window[static_cast<std::size_t>(n)] * xb[m] *
                 window[static_cast<std::size_t>(m)];
        }
        if (acc > best) {
          best = acc;
          best_lag = lag;
        }
      }
      CHECK(best_lag == 5);
    }
  }
}

TEST_CASE("gcc-phat of independent noises stays flat and bounded") {
  const auto x = white_noise(24000 * 2, 23);
  const auto y = white_noise(24000 * 2, 29);
  const auto a = stft(x);
  const auto b = stft(y);
  const auto out = gcc_phat_pair(a, b);
  REQUIRE(a.n_frames >= 100);

  // Averaged over 100 frames, an independent pair leaves no persistent lag:
  // the mean correlogram peak stays under 3x the median per-frame magnitude.
  std::vector<double> mean_corr(128, 0.0);
  std::vector<double> frame_mags;
  frame_mags.reserve(100 * 128);
  for (int t = 0; t < 100; ++t) {
    for (int l = 0; l < 128; ++l) {
      const double v = out[static_cast<std::size_t>(t) * 128 + l];
      CHECK(v <= 1.0 + 1e-6);
      CHECK(v >= -1.0 - 1e-6);
      mean_corr[static_cast<std::size_t>(l)] += v / 100.0;
      frame_mags.push_back(std::abs(v));
    }
  }
  std::nth_element(frame_mags.begin(), frame_mags.begin() + frame_mags.size() / 2,
                   frame_mags.end());
  const double median_mag = frame_mags[frame_mags.size() / 2];
  double mean_peak = 0.0;
  for (double v : mean_corr) mean_peak = std::max(mean_peak, std::abs(v));
  CHECK(mean_peak < 3.0 * median_mag);

  // Contrast: a genuinely delayed pair blows far past the same bound.
  std::vector<double> delayed(x.size(), 0.0);
  for (std::size_t i = 7; i < x.size(); ++i) delayed[i] = x[i - 7];
  const auto corr = gcc_phat_pair(a, stft(delayed));
  double delayed_peak_acc = 0.0;
  for (int t = 0; t < 100; ++t) {
    delayed_peak_acc += corr[static_cast<std::size_t>(t) * 128 + 64 + 7] / 100.0;
  }
  CHECK(delayed_peak_acc > 3.0 * median_mag);

  Spectrogram trimmed = b;
  trimmed.n_frames -= 1;
  trimmed.data.resize(static_cast<std::size_t>(trimmed.n_frames) * trimmed.n_bins);
  CHECK_THROWS_AS(gcc_phat_pair(a, trimmed), ShapeError);
}

TEST_CASE("gcc-phat pair stacking covers all channel pairs") {
  MultichannelClip clip;
  clip.channels.assign(4, white_noise(6000, 31));
  const auto f = gcc_phat(stft_all(clip));
  CHECK(f.shape[0] == 6);
  CHECK(f.shape[2] == 128);
}

TEST_CASE("ss histogram concentrates on the true direction") {
  const auto mono = white_noise(24000, 37);
  const double azi = 45.0, ele = 15.0;
  const auto clip = scene::encode_foa(mono, azi, ele);
  const auto hist = ss_histogram(stft_all(clip));
  const int ai = seld::DirectionGrid::azi_index(azi);
  const int ei = seld::DirectionGrid::ele_index(ele);
  double total = 0.0, in_azi_bin = 0.0, in_ele_bin = 0.0;
  for (int t = 0; t < hist.n_frames; ++t) {
    for (int a = 0; a < 72; ++a) total += hist.azi[static_cast<std::size_t>(t) * 72 + a];
    in_azi_bin += hist.azi[static_cast<std::size_t>(t) * 72 + ai];
    in_ele_bin += hist.ele[static_cast<std::size_t>(t) * 19 + ei];
  }
  REQUIRE(total > 0.0);
  CHECK(in_azi_bin / total >= 0.9);
  CHECK(in_ele_bin / total >= 0.9);
}

TEST_CASE("ss histogram of silence is zero and marginals always agree") {
  MultichannelClip silent;
  silent.channels.assign(4, std::vector<double>(24000, 0.0));
  const auto zero_hist = ss_histogram(stft_all(silent));
  for (double v : zero_hist.azi) CHECK(v == 0.0);
  for (double v : zero_hist.ele) CHECK(v == 0.0);

  // Marginal conservation on an arbitrary two-source scene.
  scene::SceneSpec spec;
  spec.duration_s = 2.0;
  spec.seed = 99;
  spec.events.push_back({0, 0.1, 1.2, 30.0, 10.0});
  spec.events.push_back({1, 0.8, 1.9, -100.0, -20.0});
  spec.snr_db = 30.0;
  const auto [clip, events] = scene::render_scene(spec, scene::AudioFormat::kFoa);
  const auto hist = ss_histogram(stft_all(clip));
  for (int t = 0; t < hist.n_frames; ++t) {
    double azi_sum = 0.0, ele_sum = 0.0;
    for (int a = 0; a < 72; ++a) azi_sum += hist.azi[static_cast<std::size_t>(t) * 72 + a];
    for (int e = 0; e < 19; ++e) ele_sum += hist.ele[static_cast<std::size_t>(t) * 19 + e];
    CHECK(azi_sum == doctest::Approx(ele_sum).epsilon(1e-12));
  }
}

TEST_CASE("feature cache round-trips arrays bit-exactly") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "seldkit_feat_test";
  fs::create_directories(dir);

  FeatureArray f;
  f.kind = "iv128";
  f.shape = {3, 7, 128};
  f.data.resize(3 * 7 * 128);
  Rng rng(41);
  for (auto& v : f.data) v = rng.normal();
  const auto path = feature_path(dir, "clip_0001", f.kind);
  save_feature(path, f);

  const auto loaded = load_feature(path);
  CHECK(loaded.kind == f.kind);
  CHECK(loaded.shape == f.shape);
  CHECK(loaded.data == f.data);

  const auto header = peek_feature(path);
  CHECK(header.kind == f.kind);
  CHECK(header.shape == f.shape);
  CHECK(header.data.empty());

  CHECK_THROWS_AS(load_feature(dir / "missing.feat"), IoError);
}
