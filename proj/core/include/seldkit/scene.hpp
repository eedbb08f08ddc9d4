// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "seldkit/common.hpp"

namespace seldkit::scene {

constexpr int kNumTimbreClasses = 14;

struct EventAnnotation {
  int class_id = 0;          // 0..13
  double onset_s = 0.0;
  double offset_s = 0.0;     // > onset
  double azimuth_deg = 0.0;  // [-180, 180)
  double elevation_deg = 0.0;  // [-45, 45]

  void validate() const;
};

struct SceneSpec {
  double duration_s = 0.0;
  std::vector<EventAnnotation> events;
  int max_overlap = 2;
  double snr_db = 60.0;  // +inf disables the noise floor
  std::uint64_t seed = 0;
};

enum class AudioFormat { kFoa, kMic };

AudioFormat parse_format(const std::string& s);
std::string format_name(AudioFormat f);

/// Deterministic class-distinct timbre: an amplitude-modulated harmonic
/// stack with fundamental 150 * 1.22^class plus band-passed noise,
/// peak-normalized. 24 kHz mono.
std::vector<double> synth_event_signal(int class_id, double duration_s,
                                       std::uint64_t seed);

/// ACN/SN3D first-order encode; channels W, Y, Z, X.
/// Gains: W=1, Y=cos(ele)sin(azi), Z=sin(ele), X=cos(ele)cos(azi).
MultichannelClip encode_foa(std::span<const double> mono, double azi_deg,
                            double ele_deg);

struct MicGeometry {
  std::array<std::array<double, 3>, 4> positions_m;
  static MicGeometry tetrahedron(double radius_m = 0.042);
};

/// Plane-wave fractional delays (32-tap windowed sinc) at c = 343 m/s.
MultichannelClip encode_micarray(std::span<const double> mono, double azi_deg,
                                 double ele_deg,
                                 const MicGeometry& geometry = MicGeometry::tetrahedron());

/// Sum of encoded events at their onsets plus diffuse Gaussian noise at
/// snr_db relative to the event mix power. Annotations echo spec.events.
std::pair<MultichannelClip, std::vector<EventAnnotation>> render_scene(
    const SceneSpec& spec, AudioFormat format);

/// Random scene with all angles on the 5-degree grid, overlap capped at
/// max_overlap and no same-class temporal overlap.
SceneSpec random_scene(double duration_s, int n_classes, int max_overlap,
                       double snr_db, Rng& rng);

struct DatasetConfig {
  std::filesystem::path out_dir;
  int train_clips = 200;
  int val_clips = 40;
  int test_clips = 40;
  double clip_seconds = 30.0;
  int n_classes = 8;
  int max_overlap = 2;
  double snr_db = 60.0;
  AudioFormat format = AudioFormat::kFoa;
  std::uint64_t seed = 20260810;
};

struct ManifestEntry {
  std::string clip_path;  // relative to the manifest's directory
  std::string split;      // train | val | test

  std::string stem() const;
  std::string label_path() const;  // labels/<stem>.csv
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const;
};

/// Deterministic per-seed corpus: clips/, labels/, manifest.csv.
DatasetManifest generate_dataset(const DatasetConfig& cfg);
DatasetManifest load_manifest(const std::filesystem::path& manifest_csv);

}  // namespace seldkit::scene
