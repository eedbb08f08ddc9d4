// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/labels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace seldkit::seld {

namespace {

int label_frame_count(double clip_seconds) {
  return static_cast<int>(std::ceil(clip_seconds * kLabelFps - 1e-9));
}

/// Active iff [t/10, (t+1)/10) intersects [onset, offset).
bool active_in_frame(const scene::EventAnnotation& e, int frame) {
  const double lo = static_cast<double>(frame) / kLabelFps;
  const double hi = static_cast<double>(frame + 1) / kLabelFps;
  return e.onset_s < hi && e.offset_s > lo;
}

}  // namespace

FrameTargets FrameTargets::slice(int frame_begin, int frame_count) const {
  FrameTargets out;
  out.n_frames = frame_count;
  const auto copy_rows = [&](const std::vector<double>& src, std::vector<double>& dst,
                             int row_width) {
    dst.assign(src.begin() + static_cast<std::ptrdiff_t>(frame_begin) * row_width,
               src.begin() + static_cast<std::ptrdiff_t>(frame_begin + frame_count) * row_width);
  };
  copy_rows(sed, out.sed, kNumClasses);
  copy_rows(azi, out.azi, DirectionGrid::kAzimuths);
  copy_rows(ele, out.ele, DirectionGrid::kElevations);
  copy_rows(doa_xyz, out.doa_xyz, kNumClasses * 3);
  copy_rows(doa_mask, out.doa_mask, kNumClasses);
  return out;
}

FrameTargets encode_frame_labels(const std::vector<scene::EventAnnotation>& events,
                                 double clip_seconds) {
  for (const auto& e : events) e.validate();
  for (std::size_t i = 0; i < events.size(); ++i) {
    for (std::size_t j = i + 1; j < events.size(); ++j) {
      if (events[i].class_id == events[j].class_id &&
          events[i].onset_s < events[j].offset_s &&
          events[j].onset_s < events[i].offset_s) {
        throw UnsupportedLabelError(
            "encode_frame_labels: two simultaneous events of class " +
            std::to_string(events[i].class_id) +
            " cannot be represented class-wise");
      }
    }
  }

  FrameTargets t;
  t.n_frames = label_frame_count(clip_seconds);
  t.sed.assign(static_cast<std::size_t>(t.n_frames) * kNumClasses, 0.0);
  t.azi.assign(static_cast<std::size_t>(t.n_frames) * DirectionGrid::kAzimuths, 0.0);
  t.ele.assign(static_cast<std::size_t>(t.n_frames) * DirectionGrid::kElevations, 0.0);
  t.doa_xyz.assign(static_cast<std::size_t>(t.n_frames) * kNumClasses * 3, 0.0);
  t.doa_mask.assign(static_cast<std::size_t>(t.n_frames) * kNumClasses, 0.0);

  for (const auto& e : events) {
    const int ai = DirectionGrid::azi_index(e.azimuth_deg);
    const int ei = DirectionGrid::ele_index(e.elevation_deg);
    const auto u = DirectionGrid::unit_vector(e.azimuth_deg, e.elevation_deg);
    const int first = std::max(0, static_cast<int>(std::floor(e.onset_s * kLabelFps)));
    const int last = std::min(t.n_frames - 1,
                              static_cast<int>(std::ceil(e.offset_s * kLabelFps)));
    for (int f = first; f <= last; ++f) {
      if (!active_in_frame(e, f)) continue;
      t.sed[static_cast<std::size_t>(f) * kNumClasses + e.class_id] = 1.0;
      t.doa_mask[static_cast<std::size_t>(f) * kNumClasses + e.class_id] = 1.0;
      t.azi[static_cast<std::size_t>(f) * DirectionGrid::kAzimuths + ai] = 1.0;
      t.ele[static_cast<std::size_t>(f) * DirectionGrid::kElevations + ei] = 1.0;
      double* xyz = t.doa_xyz.data() +
                    (static_cast<std::size_t>(f) * kNumClasses + e.class_id) * 3;
      xyz[0] = u[0];
      xyz[1] = u[1];
      xyz[2] = u[2];
    }
  }
  return t;
}

std::vector<FrameEvent> decode_predictions(const SeldPrediction& pred,
                                           double threshold) {
  std::vector<FrameEvent> out;
  for (int f = 0; f < pred.n_frames; ++f) {
    for (int c = 0; c < kNumClasses; ++c) {
      const double p = pred.probs[static_cast<std::size_t>(f) * kNumClasses + c];
      if (p <= threshold) continue;
      const double* xyz =
          pred.xyz.data() + (static_cast<std::size_t>(f) * kNumClasses + c) * 3;
      FrameEvent e;
      e.frame = f;
      e.class_id = c;
      e.prob = p;
      const double norm = std::sqrt(xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]);
      if (norm < 1e-12) {
        e.doa_valid = false;
        e.azimuth_deg = 0.0;
        e.elevation_deg = 0.0;
      } else {
        const auto [azi, ele] = DirectionGrid::angles_of({xyz[0], xyz[1], xyz[2]});
        e.azimuth_deg = azi;
        e.elevation_deg = ele;
      }
      out.push_back(e);
    }
  }
  return out;
}

std::vector<FrameEvent> expand_annotations(
    const std::vector<scene::EventAnnotation>& events, double clip_seconds) {
  const int n_frames = label_frame_count(clip_seconds);
  std::vector<FrameEvent> rows;
  for (int f = 0; f < n_frames; ++f) {
    for (const auto& e : events) {
      if (!active_in_frame(e, f)) continue;
      rows.push_back({f, e.class_id, e.azimuth_deg, e.elevation_deg, 1.0, true});
    }
  }
  return rows;
}

FrameTargets targets_from_events(const std::vector<FrameEvent>& rows, int n_frames) {
  FrameTargets t;
  t.n_frames = n_frames;
  t.sed.assign(static_cast<std::size_t>(n_frames) * kNumClasses, 0.0);
  t.azi.assign(static_cast<std::size_t>(n_frames) * DirectionGrid::kAzimuths, 0.0);
  t.ele.assign(static_cast<std::size_t>(n_frames) * DirectionGrid::kElevations, 0.0);
  t.doa_xyz.assign(static_cast<std::size_t>(n_frames) * kNumClasses * 3, 0.0);
  t.doa_mask.assign(static_cast<std::size_t>(n_frames) * kNumClasses, 0.0);
  for (const auto& r : rows) {
    if (r.frame < 0 || r.frame >= n_frames) continue;
    auto& sed = t.sed[static_cast<std::size_t>(r.frame) * kNumClasses + r.class_id];
    if (sed != 0.0) {
      throw UnsupportedLabelError(
          "targets_from_events: duplicate (frame, class) row at frame " +
          std::to_string(r.frame) + " class " + std::to_string(r.class_id));
    }
    sed = 1.0;
    t.doa_mask[static_cast<std::size_t>(r.frame) * kNumClasses + r.class_id] = 1.0;
    const int ai = DirectionGrid::azi_index(r.azimuth_deg);
    const int ei = DirectionGrid::ele_index(r.elevation_deg);
    t.azi[static_cast<std::size_t>(r.frame) * DirectionGrid::kAzimuths + ai] = 1.0;
    t.ele[static_cast<std::size_t>(r.frame) * DirectionGrid::kElevations + ei] = 1.0;
    const auto u = DirectionGrid::unit_vector(r.azimuth_deg, r.elevation_deg);
    double* xyz =
        t.doa_xyz.data() + (static_cast<std::size_t>(r.frame) * kNumClasses + r.class_id) * 3;
    xyz[0] = u[0];
    xyz[1] = u[1];
    xyz[2] = u[2];
  }
  return t;
}

void write_event_csv(const std::filesystem::path& path,
                     const std::vector<FrameEvent>& rows, bool with_prob) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_event_csv: cannot open " + path.string());
  char buf[160];
  for (const auto& r : rows) {
    if (with_prob) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.4f,%.4f,%.6f\n", r.frame, r.class_id,
                    r.azimuth_deg, r.elevation_deg, r.prob);
    } else {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.4f,%.4f\n", r.frame, r.class_id,
                    r.azimuth_deg, r.elevation_deg);
    }
    os << buf;
  }
  if (!os) throw IoError("write_event_csv: write failed " + path.string());
}

std::vector<FrameEvent> read_event_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_event_csv: cannot open " + path.string());
  std::vector<FrameEvent> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4 && fields.size() != 5) {
      throw IoError("read_event_csv: bad row at " + path.string() + ":" +
                    std::to_string(line_no));
    }
    FrameEvent e;
    try {
      e.frame = std::stoi(fields[0]);
      e.class_id = std::stoi(fields[1]);
      e.azimuth_deg = std::stod(fields[2]);
      e.elevation_deg = std::stod(fields[3]);
      if (fields.size() == 5) e.prob = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw IoError("read_event_csv: unparseable row at " + path.string() + ":" +
                    std::to_string(line_no));
    }
    rows.push_back(e);
  }
  return rows;
}

}  // namespace seldkit::seld
