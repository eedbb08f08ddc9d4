// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

#include "seldkit/grid.hpp"
#include "seldkit/scene.hpp"

namespace seldkit::seld {

constexpr int kNumClasses = 14;
constexpr int kLabelFps = 10;

/// Frame-rate label encoding at 10 fps. A class is active in frame t iff
/// [t/10, (t+1)/10) intersects [onset, offset).
struct FrameTargets {
  int n_frames = 0;
  std::vector<double> sed;       // [frames, 14] in {0,1}
  std::vector<double> azi;       // [frames, 72] union one-hot
  std::vector<double> ele;       // [frames, 19] union one-hot
  std::vector<double> doa_xyz;   // [frames, 14, 3] unit vectors where active
  std::vector<double> doa_mask;  // [frames, 14] == sed

  FrameTargets slice(int frame_begin, int frame_count) const;
};

/// Throws UnsupportedLabelError when two events of the same class overlap in
/// time (the class-wise format cannot represent that).
FrameTargets encode_frame_labels(const std::vector<scene::EventAnnotation>& events,
                                 double clip_seconds);

/// Per-frame network output: class probabilities and per-class (x, y, z).
struct SeldPrediction {
  int n_frames = 0;
  std::vector<double> probs;  // [frames, 14]
  std::vector<double> xyz;    // [frames, 14, 3]
};

/// One row of the event-list CSV form shared by annotations, predictions
/// and the metric suite.
struct FrameEvent {
  int frame = 0;  // 10 fps
  int class_id = 0;
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double prob = 1.0;
  bool doa_valid = true;
};

/// Classes with prob > threshold become active; their xyz is renormalized
/// to the unit sphere. A zero vector is flagged DOA-invalid and reported at
/// the grid center (1, 0, 0).
std::vector<FrameEvent> decode_predictions(const SeldPrediction& pred,
                                           double threshold = 0.3);

/// Frame-expanded annotation rows: `frame,class,azimuth,elevation`.
std::vector<FrameEvent> expand_annotations(
    const std::vector<scene::EventAnnotation>& events, double clip_seconds);

/// FrameTargets from frame-expanded rows (the annotation CSV form). Throws
/// UnsupportedLabelError on duplicate (frame, class) rows.
FrameTargets targets_from_events(const std::vector<FrameEvent>& rows, int n_frames);

/// CSV: `frame,class_id,azimuth_deg,elevation_deg[,prob]`, no header.
void write_event_csv(const std::filesystem::path& path,
                     const std::vector<FrameEvent>& rows, bool with_prob);
std::vector<FrameEvent> read_event_csv(const std::filesystem::path& path);

}  // namespace seldkit::seld
