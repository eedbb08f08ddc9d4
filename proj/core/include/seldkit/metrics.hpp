// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "seldkit/labels.hpp"

namespace seldkit::metrics {

using EventList = std::vector<seld::FrameEvent>;

/// Great-circle distance in degrees between unit vectors (1e-6 norm check).
double angular_distance_deg(const std::array<double, 3>& u,
                            const std::array<double, 3>& v);

struct SegmentCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::int64_t subs = 0, dels = 0, ins = 0;
  std::int64_t n_ref = 0;  // reference class count over segments
};

struct ErF1 {
  double er = 0.0;
  double f1 = 0.0;
  SegmentCounts counts;
};

/// Location-dependent segment metrics: per 1-s segment and class, a TP needs
/// the class active on both sides with minimum cross angular error at or
/// under the threshold. ER aggregates per-segment substitutions, deletions
/// and insertions over the reference class count.
ErF1 segment_er_f1(const EventList& pred, const EventList& ref,
                   double spatial_thresh_deg = 20.0, int seg_len_frames = 10,
                   int n_classes = seld::kNumClasses);

struct DeFr {
  double de_deg = 180.0;
  double fr = 0.0;
  std::vector<double> per_class_de;  // degrees; classes without refs get -1
  std::vector<double> per_class_fr;
};

/// Class-dependent DOA error and frame recall: per class and frame, matched
/// by minimum-cost assignment; macro-averaged over classes with at least one
/// reference frame. A class never detected contributes DE 180 and FR 0.
DeFr class_de_fr(const EventList& pred, const EventList& ref,
                 int n_classes = seld::kNumClasses);

/// (ER + (1 - F1) + DE/180 + (1 - FR)) / 4. F1 and FR as fractions in [0,1].
double seld_score(double er, double f1, double de_deg, double fr);

/// Interpolation-free average precision per direction class, macro-averaged
/// over classes with at least one positive; probs and targets are
/// [frames, n_classes] row-major. Throws when no class has a positive.
double map_score(std::span<const double> probs, std::span<const double> targets,
                 int n_classes);

/// Minimum-cost assignment over a rectangular cost matrix [n_rows, n_cols];
/// returns for each row the assigned column or -1. Cost O(n^3).
std::vector<int> min_cost_assignment(const std::vector<double>& cost, int n_rows,
                                     int n_cols);

struct MetricsReport {
  double er = 0.0;
  double f1 = 0.0;
  double de_deg = 180.0;
  double fr = 0.0;
  double seld = 1.0;
  SegmentCounts counts;
  std::vector<double> per_class_de;
  std::vector<double> per_class_fr;
};

MetricsReport evaluate(const EventList& pred, const EventList& ref,
                       double spatial_thresh_deg = 20.0,
                       int n_classes = seld::kNumClasses);

/// Deterministic JSON serialization of a report.
std::string report_to_json(const MetricsReport& report);

}  // namespace seldkit::metrics
