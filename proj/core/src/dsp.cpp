// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <unordered_map>

#include "seldkit/grid.hpp"

namespace seldkit::dsp {

namespace {

/// Process-wide FFTW plans. Plan creation is not thread-safe; execution on
/// caller-owned buffers via the new-array interface is.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  fftw_plan r2c(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = r2c_.find(n);
    if (it != r2c_.end()) return it->second;
    std::vector<double> in(static_cast<std::size_t>(n));
    std::vector<std::complex<double>> out(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(
        n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    r2c_.emplace(n, p);
    return p;
  }

  fftw_plan c2r(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = c2r_.find(n);
    if (it != c2r_.end()) return it->second;
    std::vector<std::complex<double>> in(static_cast<std::size_t>(n / 2 + 1));
    std::vector<double> out(static_cast<std::size_t>(n));
    fftw_plan p = fftw_plan_dft_c2r_1d(
        n, reinterpret_cast<fftw_complex*>(in.data()), out.data(),
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    c2r_.emplace(n, p);
    return p;
  }

 private:
  std::mutex mu_;
  std::unordered_map<int, fftw_plan> r2c_;
  std::unordered_map<int, fftw_plan> c2r_;
};

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

Spectrogram stft(std::span<const double> samples, const StftConfig& cfg) {
  const int n = cfg.n_fft;
  if (static_cast<int>(samples.size()) < n) {
    throw ShapeError("stft: clip shorter than one window (" +
                     std::to_string(samples.size()) + " < " + std::to_string(n) + ")");
  }
  const int n_frames =
      static_cast<int>((static_cast<std::int64_t>(samples.size()) - n) / cfg.hop) + 1;
  const int n_bins = n / 2 + 1;

  std::vector<double> window(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    window[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));
  }

  Spectrogram spec;
  spec.n_frames = n_frames;
  spec.n_bins = n_bins;
  spec.data.resize(static_cast<std::size_t>(n_frames) * n_bins);

  fftw_plan plan = FftPlans::instance().r2c(n);
  std::vector<double> frame(static_cast<std::size_t>(n));
  for (int t = 0; t < n_frames; ++t) {
    const double* src = samples.data() + static_cast<std::int64_t>(t) * cfg.hop;
    for (int i = 0; i < n; ++i) frame[static_cast<std::size_t>(i)] = src[i] * window[static_cast<std::size_t>(i)];
    fftw_execute_dft_r2c(plan, frame.data(),
                         reinterpret_cast<fftw_complex*>(&spec.at(t, 0)));
  }
  return spec;
}

std::vector<Spectrogram> stft_all(const MultichannelClip& clip, const StftConfig& cfg) {
  std::vector<Spectrogram> out;
  out.reserve(clip.n_channels());
  for (const auto& ch : clip.channels) out.push_back(stft(ch, cfg));
  return out;
}

MelFilterbank MelFilterbank::make(int n_mels, int sample_rate, int n_fft,
                                  double fmin, double fmax) {
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  const double bin_hz = static_cast<double>(sample_rate) / n_fft;
  fb.start.resize(static_cast<std::size_t>(n_mels));
  fb.weights.resize(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    const int b_lo = std::max(0, static_cast<int>(std::ceil(lo / bin_hz)));
    const int b_hi = std::min(fb.n_bins - 1, static_cast<int>(std::floor(hi / bin_hz)));
    fb.start[static_cast<std::size_t>(m)] = b_lo;
    auto& w = fb.weights[static_cast<std::size_t>(m)];
    for (int b = b_lo; b <= b_hi; ++b) {
      const double f = b * bin_hz;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      w.push_back(std::max(0.0, std::min(rise, fall)));
    }
  }
  return fb;
}

void MelFilterbank::apply(const double* power_bins, double* mel_out) const {
  for (int m = 0; m < n_mels; ++m) {
    const auto& w = weights[static_cast<std::size_t>(m)];
    const int b0 = start[static_cast<std::size_t>(m)];
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * power_bins[b0 + static_cast<int>(i)];
    mel_out[m] = acc;
  }
}

std::vector<double> MelFilterbank::dense() const {
  std::vector<double> mat(static_cast<std::size_t>(n_mels) * n_bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const auto& w = weights[static_cast<std::size_t>(m)];
    for (std::size_t i = 0; i < w.size(); ++i) {
      mat[static_cast<std::size_t>(m) * n_bins + start[static_cast<std::size_t>(m)] +
          static_cast<int>(i)] = w[i];
    }
  }
  return mat;
}

std::vector<double> log_mel_channel(const Spectrogram& spec, const MelFilterbank& fb) {
  std::vector<double> out(static_cast<std::size_t>(spec.n_frames) * fb.n_mels);
  std::vector<double> power(static_cast<std::size_t>(spec.n_bins));
  for (int t = 0; t < spec.n_frames; ++t) {
    for (int b = 0; b < spec.n_bins; ++b) power[static_cast<std::size_t>(b)] = std::norm(spec.at(t, b));
    fb.apply(power.data(), out.data() + static_cast<std::size_t>(t) * fb.n_mels);
    for (int m = 0; m < fb.n_mels; ++m) {
      auto& v = out[static_cast<std::size_t>(t) * fb.n_mels + m];
      v = std::log(v + 1e-10);
    }
  }
  return out;
}

FeatureArray log_mel(const std::vector<Spectrogram>& channels, int n_mels) {
  if (channels.empty()) throw ShapeError("log_mel: no channels");
  const auto fb = MelFilterbank::make(n_mels);
  FeatureArray f;
  f.kind = "logmel" + std::to_string(n_mels);
  f.shape = {static_cast<int>(channels.size()), channels[0].n_frames, n_mels};
  f.data.reserve(channels.size() * static_cast<std::size_t>(channels[0].n_frames) * n_mels);
  for (const auto& ch : channels) {
    auto one = log_mel_channel(ch, fb);
    f.data.insert(f.data.end(), one.begin(), one.end());
  }
  return f;
}

FeatureArray intensity_vector(const std::vector<Spectrogram>& foa, int n_mels) {
  if (foa.size() != 4) {
    throw ShapeError("intensity_vector: expected 4 FOA channels, got " +
                     std::to_string(foa.size()));
  }
  const auto fb = MelFilterbank::make(n_mels);
  const int n_frames = foa[0].n_frames;
  const int n_bins = foa[0].n_bins;
  FeatureArray f;
  f.kind = "iv" + std::to_string(n_mels);
  f.shape = {3, n_frames, n_mels};
  f.data.assign(static_cast<std::size_t>(3) * n_frames * n_mels, 0.0);

  std::vector<double> ix(static_cast<std::size_t>(n_bins));
  std::vector<double> iy(static_cast<std::size_t>(n_bins));
  std::vector<double> iz(static_cast<std::size_t>(n_bins));
  std::vector<double> band(static_cast<std::size_t>(n_mels));
  const auto& w = foa[0];
  const auto& y = foa[1];
  const auto& z = foa[2];
  const auto& x = foa[3];
  for (int t = 0; t < n_frames; ++t) {
    for (int b = 0; b < n_bins; ++b) {
      const auto cw = std::conj(w.at(t, b));
      ix[static_cast<std::size_t>(b)] = std::real(cw * x.at(t, b));
      iy[static_cast<std::size_t>(b)] = std::real(cw * y.at(t, b));
      iz[static_cast<std::size_t>(b)] = std::real(cw * z.at(t, b));
    }
    double* fx = f.data.data() + (static_cast<std::size_t>(0) * n_frames + t) * n_mels;
    double* fy = f.data.data() + (static_cast<std::size_t>(1) * n_frames + t) * n_mels;
    double* fz = f.data.data() + (static_cast<std::size_t>(2) * n_frames + t) * n_mels;
    fb.apply(ix.data(), fx);
    fb.apply(iy.data(), fy);
    fb.apply(iz.data(), fz);
    for (int m = 0; m < n_mels; ++m) {
      const double norm = std::sqrt(fx[m] * fx[m] + fy[m] * fy[m] + fz[m] * fz[m]);
      const double inv = 1.0 / (norm + 1e-10);
      fx[m] *= inv;
      fy[m] *= inv;
      fz[m] *= inv;
    }
  }
  return f;
}

std::vector<double> gcc_phat_pair(const Spectrogram& a, const Spectrogram& b,
                                  int n_lags) {
  if (a.n_frames != b.n_frames) {
    throw ShapeError("gcc_phat: frame count mismatch");
  }
  const int n_fft = 2 * (a.n_bins - 1);
  fftw_plan plan = FftPlans::instance().c2r(n_fft);
  std::vector<double> out(static_cast<std::size_t>(a.n_frames) * n_lags);
  std::vector<std::complex<double>> cross(static_cast<std::size_t>(a.n_bins));
  std::vector<double> corr(static_cast<std::size_t>(n_fft));
  const int half = n_lags / 2;
  for (int t = 0; t < a.n_frames; ++t) {
    for (int bin = 0; bin < a.n_bins; ++bin) {
      const auto c = std::conj(a.at(t, bin)) * b.at(t, bin);
      cross[static_cast<std::size_t>(bin)] = c / (std::abs(c) + 1e-10);
    }
    fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(cross.data()),
                         corr.data());
    double* dst = out.data() + static_cast<std::size_t>(t) * n_lags;
    for (int l = 0; l < n_lags; ++l) {
      const int lag = l - half;
      const int idx = ((lag % n_fft) + n_fft) % n_fft;
      dst[l] = corr[static_cast<std::size_t>(idx)] / n_fft;
    }
  }
  return out;
}

FeatureArray gcc_phat(const std::vector<Spectrogram>& mics, int n_lags) {
  if (mics.size() < 2) throw ShapeError("gcc_phat: need at least 2 channels");
  const int m = static_cast<int>(mics.size());
  const int n_pairs = m * (m - 1) / 2;
  FeatureArray f;
  f.kind = "gcc" + std::to_string(n_lags);
  f.shape = {n_pairs, mics[0].n_frames, n_lags};
  f.data.reserve(static_cast<std::size_t>(n_pairs) * mics[0].n_frames * n_lags);
  for (int i = 0; i < m - 1; ++i) {
    for (int j = i + 1; j < m; ++j) {
      auto pair = gcc_phat_pair(mics[static_cast<std::size_t>(i)],
                                mics[static_cast<std::size_t>(j)], n_lags);
      f.data.insert(f.data.end(), pair.begin(), pair.end());
    }
  }
  return f;
}

namespace {

/// Hermitian 4x4 covariance as packed upper-triangle entries P[i][j] with
/// P[i][j] = smoothed sum of x_i * conj(x_j).
struct Cov4 {
  std::complex<double> p[4][4];

  double trace() const {
    return std::real(p[0][0]) + std::real(p[1][1]) + std::real(p[2][2]) +
           std::real(p[3][3]);
  }

  std::complex<double> get(int i, int j) const {
    return i <= j ? p[i][j] : std::conj(p[j][i]);
  }

  /// Principal eigenvalue by power iteration; exact enough for a ratio test.
  double principal_eigenvalue() const {
    int k0 = 0;
    double best = std::real(p[0][0]);
    for (int i = 1; i < 4; ++i) {
      if (std::real(p[i][i]) > best) {
        best = std::real(p[i][i]);
        k0 = i;
      }
    }
    std::array<std::complex<double>, 4> v{};
    for (int i = 0; i < 4; ++i) v[static_cast<std::size_t>(i)] = get(i, k0);
    double lambda = 0.0;
    for (int iter = 0; iter < 12; ++iter) {
      std::array<std::complex<double>, 4> nv{};
      for (int i = 0; i < 4; ++i) {
        std::complex<double> acc = 0.0;
        for (int j = 0; j < 4; ++j) acc += get(i, j) * v[static_cast<std::size_t>(j)];
        nv[static_cast<std::size_t>(i)] = acc;
      }
      double norm = 0.0;
      for (const auto& c : nv) norm += std::norm(c);
      norm = std::sqrt(norm);
      if (norm <= 0.0) return 0.0;
      for (auto& c : nv) c /= norm;
      double new_lambda = 0.0;
      for (int i = 0; i < 4; ++i) {
        std::complex<double> acc = 0.0;
        for (int j = 0; j < 4; ++j) acc += get(i, j) * nv[static_cast<std::size_t>(j)];
        new_lambda += std::real(std::conj(nv[static_cast<std::size_t>(i)]) * acc);
      }
      v = nv;
      if (std::abs(new_lambda - lambda) <= 1e-9 * std::max(1e-30, trace())) {
        return new_lambda;
      }
      lambda = new_lambda;
    }
    return lambda;
  }
};

}  // namespace

SsHistograms ss_histogram(const std::vector<Spectrogram>& foa, double ratio) {
  if (foa.size() != 4) {
    throw ShapeError("ss_histogram: expected 4 FOA channels, got " +
                     std::to_string(foa.size()));
  }
  using seld::DirectionGrid;
  const int n_frames = foa[0].n_frames;
  const int n_bins = foa[0].n_bins;
  SsHistograms hist;
  hist.n_frames = n_frames;
  hist.azi.assign(static_cast<std::size_t>(n_frames) * DirectionGrid::kAzimuths, 0.0);
  hist.ele.assign(static_cast<std::size_t>(n_frames) * DirectionGrid::kElevations, 0.0);

  // Per-bin outer products of one frame, packed upper triangle (10 entries).
  const auto frame_products = [&](int t, std::vector<std::complex<double>>& row) {
    row.assign(static_cast<std::size_t>(n_bins) * 10, {0.0, 0.0});
    for (int b = 0; b < n_bins; ++b) {
      std::array<std::complex<double>, 4> x = {foa[0].at(t, b), foa[1].at(t, b),
                                               foa[2].at(t, b), foa[3].at(t, b)};
      auto* dst = row.data() + static_cast<std::size_t>(b) * 10;
      int k = 0;
      for (int i = 0; i < 4; ++i) {
        for (int j = i; j < 4; ++j) {
          dst[k++] = x[static_cast<std::size_t>(i)] * std::conj(x[static_cast<std::size_t>(j)]);
        }
      }
    }
  };

  std::array<std::vector<std::complex<double>>, 3> rows;  // t-1, t, t+1
  std::vector<double> hist2d(static_cast<std::size_t>(DirectionGrid::kAzimuths) *
                             DirectionGrid::kElevations);
  for (int t = 0; t < n_frames; ++t) {
    if (t == 0) {
      frame_products(0, rows[1]);
      rows[0] = rows[1];  // clipped neighborhood at the clip edge
      if (n_frames > 1) frame_products(1, rows[2]);
      else rows[2] = rows[1];
    } else {
      rows[0].swap(rows[1]);
      rows[1].swap(rows[2]);
      if (t + 1 < n_frames) frame_products(t + 1, rows[2]);
      else rows[2] = rows[1];
    }

    std::fill(hist2d.begin(), hist2d.end(), 0.0);
    double frame_total = 0.0;
    for (int b = 1; b + 1 < n_bins; ++b) {  // skip DC and Nyquist
      Cov4 cov{};
      int k = 0;
      for (int i = 0; i < 4; ++i) {
        for (int j = i; j < 4; ++j) {
          std::complex<double> acc = 0.0;
          for (int r = 0; r < 3; ++r) {
            const auto* row = rows[static_cast<std::size_t>(r)].data();
            for (int db = -1; db <= 1; ++db) {
              acc += row[static_cast<std::size_t>(b + db) * 10 + k];
            }
          }
          cov.p[i][j] = acc;
          ++k;
        }
      }
      const double tr = cov.trace();
      if (tr <= 1e-18) continue;
      if (cov.principal_eigenvalue() / tr < ratio) continue;

      // Intensity direction from the smoothed covariance: W pairs X, Y, Z.
      const double iv_x = std::real(cov.p[0][3]);
      const double iv_y = std::real(cov.p[0][1]);
      const double iv_z = std::real(cov.p[0][2]);
      if (iv_x == 0.0 && iv_y == 0.0 && iv_z == 0.0) continue;
      const double azi = rad_to_deg(std::atan2(iv_y, iv_x));
      const double ele = rad_to_deg(std::atan2(iv_z, std::hypot(iv_x, iv_y)));
      const int ai = DirectionGrid::azi_index_wrapped(azi);
      const int ei = DirectionGrid::ele_index_clamped(ele);
      hist2d[static_cast<std::size_t>(ai) * DirectionGrid::kElevations + ei] += 1.0;
      frame_total += 1.0;
    }

    if (frame_total > 0.0) {
      double* az = hist.azi.data() + static_cast<std::size_t>(t) * DirectionGrid::kAzimuths;
      double* el = hist.ele.data() + static_cast<std::size_t>(t) * DirectionGrid::kElevations;
      for (int a = 0; a < DirectionGrid::kAzimuths; ++a) {
        for (int e = 0; e < DirectionGrid::kElevations; ++e) {
          const double v = hist2d[static_cast<std::size_t>(a) * DirectionGrid::kElevations + e];
          az[a] += v;
          el[e] += v;
        }
      }
    }
  }
  return hist;
}

}  // namespace seldkit::dsp
