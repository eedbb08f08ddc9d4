// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "seldkit/audio.hpp"
#include "seldkit/grid.hpp"
#include "seldkit/labels.hpp"

namespace seldkit::scene {

void EventAnnotation::validate() const {
  if (class_id < 0 || class_id >= kNumTimbreClasses) {
    throw ConfigError("event class_id out of range: " + std::to_string(class_id));
  }
  if (!(offset_s > onset_s)) {
    throw ConfigError("event offset must exceed onset");
  }
  if (azimuth_deg < -180.0 || azimuth_deg >= 180.0) {
    throw ConfigError("event azimuth out of [-180, 180)");
  }
  if (elevation_deg < -45.0 || elevation_deg > 45.0) {
    throw ConfigError("event elevation out of [-45, 45]");
  }
}

AudioFormat parse_format(const std::string& s) {
  if (s == "foa") return AudioFormat::kFoa;
  if (s == "mic") return AudioFormat::kMic;
  throw ConfigError("unknown audio format: " + s + " (expected foa or mic)");
}

std::string format_name(AudioFormat f) {
  return f == AudioFormat::kFoa ? "foa" : "mic";
}

std::vector<double> synth_event_signal(int class_id, double duration_s,
                                       std::uint64_t seed) {
  if (class_id < 0 || class_id >= kNumTimbreClasses) {
    throw ConfigError("synth_event_signal: class_id out of range");
  }
  const auto n = static_cast<std::int64_t>(std::llround(duration_s * kSampleRate));
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  if (n == 0) return x;

  Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(class_id) + 1));
  const double f0 = 150.0 * std::pow(1.22, class_id);
  const double am_rate = 2.0 + static_cast<double>(class_id % 5);
  const double am_phase = rng.uniform(0.0, 2.0 * kPi);

  constexpr int kHarmonics = 6;
  double phase[kHarmonics];
  double amp[kHarmonics];
  for (int k = 0; k < kHarmonics; ++k) {
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
    amp[k] = 1.0 / static_cast<double>(k + 1);
  }

  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    double s = 0.0;
    for (int k = 0; k < kHarmonics; ++k) {
      s += amp[k] * std::sin(2.0 * kPi * f0 * (k + 1) * t + phase[k]);
    }
    const double am = 1.0 + 0.5 * std::sin(2.0 * kPi * am_rate * t + am_phase);
    x[static_cast<std::size_t>(i)] = s * am;
  }

  // Band-passed noise around the third harmonic, -18 dB vs the stack.
  {
    const double fc = std::min(f0 * 3.0, 10000.0);
    const double q = 2.0;
    const double w0 = 2.0 * kPi * fc / kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double b0 = alpha, b1 = 0.0, b2 = -alpha;
    const double a0 = 1.0 + alpha, a1 = -2.0 * std::cos(w0), a2 = 1.0 - alpha;
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double v = rng.normal();
      const double y = (b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      x[static_cast<std::size_t>(i)] += 0.125 * y;
    }
  }

  // 10 ms raised-cosine attack/release.
  const auto ramp = std::min<std::int64_t>(n / 2, kSampleRate / 100);
  for (std::int64_t i = 0; i < ramp; ++i) {
    const double g = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(i) / ramp));
    x[static_cast<std::size_t>(i)] *= g;
    x[static_cast<std::size_t>(n - 1 - i)] *= g;
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : x) v /= peak;
  }
  return x;
}

MultichannelClip encode_foa(std::span<const double> mono, double azi_deg,
                            double ele_deg) {
  if (azi_deg < -180.0 || azi_deg >= 180.0 || ele_deg < -90.0 || ele_deg > 90.0) {
    throw ConfigError("encode_foa: angles out of range");
  }
  const double a = deg_to_rad(azi_deg), e = deg_to_rad(ele_deg);
  const double gains[4] = {1.0, std::cos(e) * std::sin(a), std::sin(e),
                           std::cos(e) * std::cos(a)};
  MultichannelClip clip;
  clip.channels.resize(4);
  for (int c = 0; c < 4; ++c) {
    auto& ch = clip.channels[static_cast<std::size_t>(c)];
    ch.resize(mono.size());
    for (std::size_t i = 0; i < mono.size(); ++i) ch[i] = gains[c] * mono[i];
  }
  return clip;
}

MicGeometry MicGeometry::tetrahedron(double radius_m) {
  const double s = radius_m / std::sqrt(3.0);
  MicGeometry g;
  g.positions_m = {{{s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}}};
  return g;
}

namespace {

/// Windowed-sinc fractional delay: y[i] ~= x(i - delay), 32 taps.
std::vector<double> fractional_delay(std::span<const double> x, double delay) {
  constexpr int kHalf = 16;
  const auto n = static_cast<std::int64_t>(x.size());
  const double n0 = std::floor(delay);
  const double frac = delay - n0;
  double taps[2 * kHalf];
  for (int m = -kHalf + 1; m <= kHalf; ++m) {
    const double u = static_cast<double>(m) - frac;
    const double sinc = u == 0.0 ? 1.0 : std::sin(kPi * u) / (kPi * u);
    const double win = 0.5 * (1.0 + std::cos(kPi * u / kHalf));
    taps[m + kHalf - 1] = sinc * win;
  }
  std::vector<double> y(x.size(), 0.0);
  const auto i0 = static_cast<std::int64_t>(n0);
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int m = -kHalf + 1; m <= kHalf; ++m) {
      const std::int64_t j = i - i0 - m;
      if (j >= 0 && j < n) acc += x[static_cast<std::size_t>(j)] * taps[m + kHalf - 1];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

}  // namespace

MultichannelClip encode_micarray(std::span<const double> mono, double azi_deg,
                                 double ele_deg, const MicGeometry& geometry) {
  constexpr double kSpeedOfSound = 343.0;
  const auto u = seld::DirectionGrid::unit_vector(azi_deg, ele_deg);
  MultichannelClip clip;
  clip.channels.resize(4);
  for (int c = 0; c < 4; ++c) {
    const auto& r = geometry.positions_m[static_cast<std::size_t>(c)];
    const double tau = -(r[0] * u[0] + r[1] * u[1] + r[2] * u[2]) / kSpeedOfSound;
    clip.channels[static_cast<std::size_t>(c)] =
        fractional_delay(mono, tau * kSampleRate);
  }
  return clip;
}

std::pair<MultichannelClip, std::vector<EventAnnotation>> render_scene(
    const SceneSpec& spec, AudioFormat format) {
  // Sweep-check the overlap cap.
  std::vector<std::pair<double, int>> edges;
  for (const auto& e : spec.events) {
    e.validate();
    if (e.offset_s > spec.duration_s + 1e-9) {
      throw ConfigError("render_scene: event extends past the clip");
    }
    edges.emplace_back(e.onset_s, +1);
    edges.emplace_back(e.offset_s, -1);
  }
  std::sort(edges.begin(), edges.end());
  int depth = 0;
  for (const auto& [at, delta] : edges) {
    depth += delta;
    if (depth > spec.max_overlap) {
      throw ConfigError("render_scene: overlap exceeds max_overlap=" +
                        std::to_string(spec.max_overlap));
    }
  }

  const auto n = static_cast<std::int64_t>(std::llround(spec.duration_s * kSampleRate));
  MultichannelClip clip;
  clip.channels.assign(4, std::vector<double>(static_cast<std::size_t>(n), 0.0));

  constexpr double kEventGain = 0.35;
  for (std::size_t idx = 0; idx < spec.events.size(); ++idx) {
    const auto& e = spec.events[idx];
    // Event seed from content, not list position, so single-event renders
    // superpose exactly to the multi-event render.
    std::uint64_t es = Rng::mix(spec.seed, static_cast<std::uint64_t>(e.class_id) + 1);
    es = Rng::mix(es, static_cast<std::uint64_t>(std::llround(e.onset_s * 1e6)) + 1);
    es = Rng::mix(es, static_cast<std::uint64_t>(std::llround((e.azimuth_deg + 360.0) * 1e4)));
    es = Rng::mix(es, static_cast<std::uint64_t>(std::llround((e.elevation_deg + 90.0) * 1e4)));
    const auto mono = synth_event_signal(e.class_id, e.offset_s - e.onset_s, es);
    const MultichannelClip enc =
        format == AudioFormat::kFoa
            ? encode_foa(mono, e.azimuth_deg, e.elevation_deg)
            : encode_micarray(mono, e.azimuth_deg, e.elevation_deg);
    const auto at = static_cast<std::int64_t>(std::llround(e.onset_s * kSampleRate));
    for (int c = 0; c < 4; ++c) {
      auto& dst = clip.channels[static_cast<std::size_t>(c)];
      const auto& src = enc.channels[static_cast<std::size_t>(c)];
      const auto len = std::min<std::int64_t>(static_cast<std::int64_t>(src.size()), n - at);
      for (std::int64_t i = 0; i < len; ++i) {
        dst[static_cast<std::size_t>(at + i)] += kEventGain * src[static_cast<std::size_t>(i)];
      }
    }
  }

  if (std::isfinite(spec.snr_db)) {
    double mix_power = 0.0;
    for (const auto& ch : clip.channels) {
      for (double v : ch) mix_power += v * v;
    }
    mix_power /= static_cast<double>(4 * std::max<std::int64_t>(1, n));
    if (mix_power <= 0.0) mix_power = 1e-2;  // silent scene: absolute floor
    const double noise_std = std::sqrt(mix_power * std::pow(10.0, -spec.snr_db / 10.0));
    Rng noise_rng(Rng::mix(spec.seed, 0x6e6f6973ULL));
    for (auto& ch : clip.channels) {
      for (auto& v : ch) v += noise_std * noise_rng.normal();
    }
  }

  double peak = 0.0;
  for (const auto& ch : clip.channels) {
    for (double v : ch) peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.99) {
    const double g = 0.99 / peak;
    for (auto& ch : clip.channels) {
      for (auto& v : ch) v *= g;
    }
  }
  return {std::move(clip), spec.events};
}

SceneSpec random_scene(double duration_s, int n_classes, int max_overlap,
                       double snr_db, Rng& rng) {
  if (n_classes < 1 || n_classes > kNumTimbreClasses) {
    throw ConfigError("random_scene: n_classes out of range");
  }
  SceneSpec spec;
  spec.duration_s = duration_s;
  spec.max_overlap = max_overlap;
  spec.snr_db = snr_db;
  spec.seed = rng.raw();

  const int target = std::max(
      1, static_cast<int>(std::llround(duration_s / 30.0 *
                                       static_cast<double>(rng.uniform_int(10, 14)))));
  for (int k = 0; k < target; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      EventAnnotation e;
      e.class_id = static_cast<int>(rng.uniform_int(0, n_classes - 1));
      const double dur = rng.uniform(1.0, std::min(3.0, duration_s));
      e.onset_s = rng.uniform(0.0, duration_s - dur);
      e.offset_s = e.onset_s + dur;
      e.azimuth_deg = -180.0 + 5.0 * static_cast<double>(rng.uniform_int(0, 71));
      e.elevation_deg = -45.0 + 5.0 * static_cast<double>(rng.uniform_int(0, 18));

      bool ok = true;
      for (const auto& other : spec.events) {
        // Same-class events stay clear of each other by more than one label
        // frame, so no 10 fps frame is ever claimed by two of them.
        constexpr double kSameClassGap = 0.15;
        const bool near = e.onset_s < other.offset_s + kSameClassGap &&
                          other.onset_s < e.offset_s + kSameClassGap;
        if (near && other.class_id == e.class_id) {
          ok = false;
          break;
        }
      }
      if (ok) {
        // Depth check including the candidate.
        std::vector<std::pair<double, int>> edges;
        for (const auto& other : spec.events) {
          edges.emplace_back(other.onset_s, +1);
          edges.emplace_back(other.offset_s, -1);
        }
        edges.emplace_back(e.onset_s, +1);
        edges.emplace_back(e.offset_s, -1);
        std::sort(edges.begin(), edges.end());
        int depth = 0;
        for (const auto& [at, delta] : edges) {
          depth += delta;
          if (depth > max_overlap) {
            ok = false;
            break;
          }
        }
      }
      if (ok) {
        spec.events.push_back(e);
        break;
      }
    }
  }
  std::sort(spec.events.begin(), spec.events.end(),
            [](const EventAnnotation& a, const EventAnnotation& b) {
              return a.onset_s < b.onset_s;
            });
  return spec;
}

std::string ManifestEntry::stem() const {
  const auto slash = clip_path.find_last_of('/');
  std::string name = slash == std::string::npos ? clip_path : clip_path.substr(slash + 1);
  const auto dot = name.find_last_of('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::string ManifestEntry::label_path() const { return "labels/" + stem() + ".csv"; }

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == name) out.push_back(e);
  }
  return out;
}

DatasetManifest generate_dataset(const DatasetConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out_dir / "clips", ec);
  fs::create_directories(cfg.out_dir / "labels", ec);
  if (!fs::is_directory(cfg.out_dir / "clips") || !fs::is_directory(cfg.out_dir / "labels")) {
    throw IoError("generate_dataset: cannot create output tree under " +
                  cfg.out_dir.string());
  }

  struct Job {
    std::string stem;
    std::string split;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  const std::pair<const char*, int> splits[3] = {
      {"train", cfg.train_clips}, {"val", cfg.val_clips}, {"test", cfg.test_clips}};
  std::uint64_t index = 0;
  for (const auto& [split, count] : splits) {
    for (int i = 0; i < count; ++i) {
      char stem[64];
      std::snprintf(stem, sizeof(stem), "%s_%04d", split, i);
      jobs.push_back({stem, split, Rng::mix(cfg.seed, ++index)});
    }
  }

  const auto n_jobs = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t j = 0; j < n_jobs; ++j) {
    const auto& job = jobs[static_cast<std::size_t>(j)];
    Rng rng(job.seed);
    SceneSpec spec = random_scene(cfg.clip_seconds, cfg.n_classes, cfg.max_overlap,
                                  cfg.snr_db, rng);
    auto [clip, events] = render_scene(spec, cfg.format);
    write_wav(cfg.out_dir / "clips" / (job.stem + ".wav"), clip);
    seld::write_event_csv(cfg.out_dir / "labels" / (job.stem + ".csv"),
                          seld::expand_annotations(events, cfg.clip_seconds),
                          /*with_prob=*/false);
  }

  DatasetManifest manifest;
  manifest.root = cfg.out_dir;
  std::ofstream os(cfg.out_dir / "manifest.csv", std::ios::trunc);
  if (!os) throw IoError("generate_dataset: cannot write manifest");
  for (const auto& job : jobs) {
    ManifestEntry entry{"clips/" + job.stem + ".wav", job.split};
    os << entry.clip_path << "," << entry.split << "\n";
    manifest.entries.push_back(std::move(entry));
  }
  if (!os) throw IoError("generate_dataset: manifest write failed");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_csv) {
  std::ifstream is(manifest_csv);
  if (!is) throw IoError("load_manifest: cannot open " + manifest_csv.string());
  DatasetManifest manifest;
  manifest.root = manifest_csv.parent_path();
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find_last_of(',');
    if (comma == std::string::npos) {
      throw IoError("load_manifest: bad line: " + line);
    }
    manifest.entries.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return manifest;
}

}  // namespace seldkit::scene
