// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace seldkit {

/// Tensor/array dimensions do not line up with what an operation expects.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unparseable configuration (config file, CLI, scene spec).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-level failure: missing path, bad magic, truncated record.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Annotations that the class-wise label format cannot represent.
class UnsupportedLabelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kSampleRate = 24000;

/// Sampled audio, one vector per channel. FOA channels are ordered
/// W, Y, Z, X (ACN); simulated mic arrays use sensor order.
struct MultichannelClip {
  int sample_rate = kSampleRate;
  std::vector<std::vector<double>> channels;

  std::int64_t n_samples() const {
    return channels.empty() ? 0 : static_cast<std::int64_t>(channels[0].size());
  }
  std::size_t n_channels() const { return channels.size(); }
};

/// Deterministic RNG. All sampling goes through explicit bit manipulation so
/// that a seed pins the produced stream independent of the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Beta(0.5, 0.5): arcsine law, lambda = sin^2(pi u / 2).
  double beta_half_half() {
    const double s = std::sin(1.5707963267948966 * uniform());
    return s * s;
  }

  /// Independent substream derived from this generator's seed lineage.
  Rng fork(std::uint64_t stream) {
    return Rng(mix(gen_(), stream));
  }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

constexpr double kPi = 3.14159265358979323846264338327950288;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

}  // namespace seldkit
