// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "seldkit/common.hpp"

namespace seldkit::dsp {

struct StftConfig {
  int sample_rate = 24000;
  int n_fft = 1024;
  int hop = 300;
};

/// One channel's complex STFT, [frame][bin], 513 bins at n_fft 1024.
struct Spectrogram {
  int n_frames = 0;
  int n_bins = 0;
  std::vector<std::complex<double>> data;

  std::complex<double>& at(int frame, int bin) {
    return data[static_cast<std::size_t>(frame) * n_bins + bin];
  }
  const std::complex<double>& at(int frame, int bin) const {
    return data[static_cast<std::size_t>(frame) * n_bins + bin];
  }
};

/// Hann-windowed STFT with no padding; the first frame starts at sample 0,
/// frames = floor((len - n_fft) / hop) + 1.
Spectrogram stft(std::span<const double> samples, const StftConfig& cfg = {});
std::vector<Spectrogram> stft_all(const MultichannelClip& clip,
                                  const StftConfig& cfg = {});

/// Triangular filters on the HTK mel scale, unnormalized.
struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;
  std::vector<int> start;                    // first touched bin per filter
  std::vector<std::vector<double>> weights;  // per filter

  static MelFilterbank make(int n_mels, int sample_rate = 24000, int n_fft = 1024,
                            double fmin = 50.0, double fmax = 12000.0);
  void apply(const double* power_bins, double* mel_out) const;
  /// Dense [n_mels, n_bins] matrix, for tests and inspection.
  std::vector<double> dense() const;
};

/// Plain real array with a feature-kind tag. Shapes per kind:
///   log-mel:    [channels, frames, n_mels]
///   iv:         [3, frames, n_mels]
///   gcc:        [pairs, frames, n_lags]
///   azi-hist:   [1, frames, 72]
///   ele-hist:   [1, frames, 19]
struct FeatureArray {
  std::string kind;
  std::vector<int> shape;
  std::vector<double> data;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

/// ln(mel power + 1e-10), one channel: [frames, n_mels].
std::vector<double> log_mel_channel(const Spectrogram& spec, const MelFilterbank& fb);
FeatureArray log_mel(const std::vector<Spectrogram>& channels, int n_mels);

/// FOA active intensity per mel band, normalized per band to at most unit
/// norm: [3, frames, n_mels]. Channels must be W, Y, Z, X.
FeatureArray intensity_vector(const std::vector<Spectrogram>& foa, int n_mels = 128);

/// PHAT-whitened cross-correlation, center-cropped to n_lags lags around 0
/// (index l holds lag l - n_lags/2): [frames, n_lags]. A positive peak lag
/// means b lags a.
std::vector<double> gcc_phat_pair(const Spectrogram& a, const Spectrogram& b,
                                  int n_lags = 128);
/// All C(M,2) pairs in (0,1),(0,2),...,(M-2,M-1) order: [pairs, frames, lags].
FeatureArray gcc_phat(const std::vector<Spectrogram>& mics, int n_lags = 128);

struct SsHistograms {
  int n_frames = 0;
  std::vector<double> azi;  // [frames, 72]
  std::vector<double> ele;  // [frames, 19]
};

/// Single-source time-frequency bin histograms. A bin is single-source when
/// the principal eigenvalue of its 3x3-neighborhood-averaged spatial
/// covariance holds at least `ratio` of the trace; each SS bin votes for the
/// grid cell of its intensity-vector direction.
SsHistograms ss_histogram(const std::vector<Spectrogram>& foa, double ratio = 0.8);

}  // namespace seldkit::dsp
