// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

namespace seldkit::metrics {

namespace {

std::array<double, 3> direction_of(const seld::FrameEvent& e) {
  return seld::DirectionGrid::unit_vector(e.azimuth_deg, e.elevation_deg);
}

int segment_of(int frame, int seg_len) { return frame / seg_len; }

}  // namespace

double angular_distance_deg(const std::array<double, 3>& u,
                            const std::array<double, 3>& v) {
  const double nu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const double nv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (std::abs(nu - 1.0) > 1e-6 || std::abs(nv - 1.0) > 1e-6) {
    throw ShapeError("angular_distance: inputs must be unit vectors");
  }
  const double dot = std::clamp(u[0] * v[0] + u[1] * v[1] + u[2] * v[2], -1.0, 1.0);
  return rad_to_deg(std::acos(dot));
}

ErF1 segment_er_f1(const EventList& pred, const EventList& ref,
                   double spatial_thresh_deg, int seg_len_frames, int n_classes) {
  for (const auto& e : pred) {
    if (e.frame < 0) throw ShapeError("segment_er_f1: negative frame index");
  }

  int n_segments = 0;
  for (const auto& e : pred) {
    n_segments = std::max(n_segments, segment_of(e.frame, seg_len_frames) + 1);
  }
  for (const auto& e : ref) {
    n_segments = std::max(n_segments, segment_of(e.frame, seg_len_frames) + 1);
  }

  // (segment, class) -> DOA instances within the segment.
  using Key = std::pair<int, int>;
  std::map<Key, std::vector<std::array<double, 3>>> pred_map, ref_map;
  for (const auto& e : pred) {
    pred_map[{segment_of(e.frame, seg_len_frames), e.class_id}].push_back(direction_of(e));
  }
  for (const auto& e : ref) {
    ref_map[{segment_of(e.frame, seg_len_frames), e.class_id}].push_back(direction_of(e));
  }

  ErF1 out;
  for (int s = 0; s < n_segments; ++s) {
    std::int64_t seg_fp = 0, seg_fn = 0, seg_ref_classes = 0;
    for (int c = 0; c < n_classes; ++c) {
      const auto pit = pred_map.find({s, c});
      const auto rit = ref_map.find({s, c});
      const bool in_pred = pit != pred_map.end();
      const bool in_ref = rit != ref_map.end();
      if (in_ref) ++seg_ref_classes;
      if (!in_pred && !in_ref) continue;
      if (in_pred && !in_ref) {
        ++seg_fp;
        continue;
      }
      if (!in_pred && in_ref) {
        ++seg_fn;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      for (const auto& pu : pit->second) {
        for (const auto& ru : rit->second) {
          best = std::min(best, angular_distance_deg(pu, ru));
        }
      }
      if (best <= spatial_thresh_deg) {
        ++out.counts.tp;
      } else {
        ++seg_fp;
        ++seg_fn;
      }
    }
    out.counts.fp += seg_fp;
    out.counts.fn += seg_fn;
    out.counts.subs += std::min(seg_fp, seg_fn);
    out.counts.dels += std::max<std::int64_t>(0, seg_fn - seg_fp);
    out.counts.ins += std::max<std::int64_t>(0, seg_fp - seg_fn);
    out.counts.n_ref += seg_ref_classes;
  }

  out.er = out.counts.n_ref > 0
               ? static_cast<double>(out.counts.subs + out.counts.dels + out.counts.ins) /
                     static_cast<double>(out.counts.n_ref)
               : (out.counts.fp > 0 ? 1.0 : 0.0);
  const double denom =
      static_cast<double>(2 * out.counts.tp + out.counts.fp + out.counts.fn);
  out.f1 = denom > 0.0 ? 2.0 * static_cast<double>(out.counts.tp) / denom : 1.0;
  return out;
}

DeFr class_de_fr(const EventList& pred, const EventList& ref, int n_classes) {
  // (frame, class) -> instances.
  using Key = std::pair<int, int>;
  std::map<Key, std::vector<std::array<double, 3>>> pred_map, ref_map;
  for (const auto& e : pred) pred_map[{e.frame, e.class_id}].push_back(direction_of(e));
  for (const auto& e : ref) ref_map[{e.frame, e.class_id}].push_back(direction_of(e));

  std::vector<std::int64_t> ref_total(static_cast<std::size_t>(n_classes), 0);
  std::vector<std::int64_t> matched(static_cast<std::size_t>(n_classes), 0);
  std::vector<double> err_sum(static_cast<std::size_t>(n_classes), 0.0);
  for (const auto& [key, instances] : ref_map) {
    ref_total[static_cast<std::size_t>(key.second)] +=
        static_cast<std::int64_t>(instances.size());
    const auto pit = pred_map.find(key);
    if (pit == pred_map.end()) continue;
    const auto& pv = pit->second;
    const auto& rv = instances;
    const int np = static_cast<int>(pv.size());
    const int nr = static_cast<int>(rv.size());
    std::vector<double> cost(static_cast<std::size_t>(np) * nr);
    for (int i = 0; i < np; ++i) {
      for (int j = 0; j < nr; ++j) {
        cost[static_cast<std::size_t>(i) * nr + j] = angular_distance_deg(
            pv[static_cast<std::size_t>(i)], rv[static_cast<std::size_t>(j)]);
      }
    }
    const auto assign = min_cost_assignment(cost, np, nr);
    for (int i = 0; i < np; ++i) {
      if (assign[static_cast<std::size_t>(i)] < 0) continue;
      err_sum[static_cast<std::size_t>(key.second)] +=
          cost[static_cast<std::size_t>(i) * nr + assign[static_cast<std::size_t>(i)]];
      ++matched[static_cast<std::size_t>(key.second)];
    }
  }

  DeFr out;
  out.per_class_de.assign(static_cast<std::size_t>(n_classes), -1.0);
  out.per_class_fr.assign(static_cast<std::size_t>(n_classes), -1.0);
  double de_acc = 0.0, fr_acc = 0.0;
  int n_scored = 0;
  for (int c = 0; c < n_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (ref_total[ci] == 0) continue;
    ++n_scored;
    const double de =
        matched[ci] > 0 ? err_sum[ci] / static_cast<double>(matched[ci]) : 180.0;
    const double fr = static_cast<double>(matched[ci]) / static_cast<double>(ref_total[ci]);
    out.per_class_de[ci] = de;
    out.per_class_fr[ci] = fr;
    de_acc += de;
    fr_acc += fr;
  }
  if (n_scored > 0) {
    out.de_deg = de_acc / n_scored;
    out.fr = fr_acc / n_scored;
  }
  return out;
}

double seld_score(double er, double f1, double de_deg, double fr) {
  if (er < 0.0 || f1 < 0.0 || f1 > 1.0 || de_deg < 0.0 || de_deg > 180.0 ||
      fr < 0.0 || fr > 1.0) {
    throw ConfigError("seld_score: input out of range");
  }
  return (er + (1.0 - f1) + de_deg / 180.0 + (1.0 - fr)) / 4.0;
}

double map_score(std::span<const double> probs, std::span<const double> targets,
                 int n_classes) {
  if (probs.size() != targets.size() ||
      probs.size() % static_cast<std::size_t>(n_classes) != 0) {
    throw ShapeError("map_score: shape mismatch");
  }
  const auto n_frames =
      static_cast<int>(probs.size() / static_cast<std::size_t>(n_classes));
  double ap_acc = 0.0;
  int n_scored = 0;
  std::vector<int> order(static_cast<std::size_t>(n_frames));
  for (int c = 0; c < n_classes; ++c) {
    std::int64_t positives = 0;
    for (int t = 0; t < n_frames; ++t) {
      if (targets[static_cast<std::size_t>(t) * n_classes + c] > 0.5) ++positives;
    }
    if (positives == 0) continue;
    ++n_scored;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return probs[static_cast<std::size_t>(a) * n_classes + c] >
             probs[static_cast<std::size_t>(b) * n_classes + c];
    });
    double ap = 0.0;
    std::int64_t hits = 0;
    for (int rank = 0; rank < n_frames; ++rank) {
      const int t = order[static_cast<std::size_t>(rank)];
      if (targets[static_cast<std::size_t>(t) * n_classes + c] > 0.5) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap_acc += ap / static_cast<double>(positives);
  }
  if (n_scored == 0) {
    throw ConfigError("map_score: no positives in any class (undefined metric)");
  }
  return ap_acc / n_scored;
}

std::vector<int> min_cost_assignment(const std::vector<double>& cost, int n_rows,
                                     int n_cols) {
  if (n_rows == 0 || n_cols == 0) {
    return std::vector<int>(static_cast<std::size_t>(n_rows), -1);
  }
  if (static_cast<std::size_t>(n_rows) * static_cast<std::size_t>(n_cols) != cost.size()) {
    throw ShapeError("min_cost_assignment: cost size mismatch");
  }
  const bool transpose = n_rows > n_cols;
  const int n = transpose ? n_cols : n_rows;
  const int m = transpose ? n_rows : n_cols;
  const auto at = [&](int i, int j) {
    return transpose ? cost[static_cast<std::size_t>(j) * n_cols + i]
                     : cost[static_cast<std::size_t>(i) * n_cols + j];
  };

  // Shortest augmenting paths with row/column potentials.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(static_cast<std::size_t>(n_rows), -1);
  for (int j = 1; j <= m; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i == 0) continue;
    if (transpose) {
      row_to_col[static_cast<std::size_t>(j) - 1] = i - 1;
    } else {
      row_to_col[static_cast<std::size_t>(i) - 1] = j - 1;
    }
  }
  return row_to_col;
}

MetricsReport evaluate(const EventList& pred, const EventList& ref,
                       double spatial_thresh_deg, int n_classes) {
  MetricsReport report;
  const auto erf1 = segment_er_f1(pred, ref, spatial_thresh_deg, 10, n_classes);
  const auto defr = class_de_fr(pred, ref, n_classes);
  report.er = erf1.er;
  report.f1 = erf1.f1;
  report.counts = erf1.counts;
  report.de_deg = defr.de_deg;
  report.fr = defr.fr;
  report.per_class_de = defr.per_class_de;
  report.per_class_fr = defr.per_class_fr;
  report.seld = seld_score(std::min(report.er, 1.0), report.f1, report.de_deg, report.fr);
  return report;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["ER"] = report.er;
  j["F1"] = report.f1;
  j["DE_deg"] = report.de_deg;
  j["FR"] = report.fr;
  j["SELD"] = report.seld;
  j["counts"] = {{"TP", report.counts.tp},  {"FP", report.counts.fp},
                 {"FN", report.counts.fn},  {"S", report.counts.subs},
                 {"D", report.counts.dels}, {"I", report.counts.ins},
                 {"N_ref", report.counts.n_ref}};
  j["per_class_DE_deg"] = report.per_class_de;
  j["per_class_FR"] = report.per_class_fr;
  return j.dump(2) + "\n";
}

}  // namespace seldkit::metrics
