// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "seldkit/metrics.hpp"

using namespace seldkit;
using namespace seldkit::metrics;
using seldkit::seld::DirectionGrid;
using seldkit::seld::FrameEvent;

namespace {

// ---------------------------------------------------------------------------
// Brute-force reference implementations: direct per-definition enumeration,
// no shared code with the library path beyond angular_distance_deg.
// ---------------------------------------------------------------------------

double oracle_angle(const FrameEvent& a, const FrameEvent& b) {
  return angular_distance_deg(DirectionGrid::unit_vector(a.azimuth_deg, a.elevation_deg),
                              DirectionGrid::unit_vector(b.azimuth_deg, b.elevation_deg));
}

struct OracleErF1 {
  double er, f1;
  std::int64_t tp, fp, fn;
};

OracleErF1 oracle_segment_er_f1(const EventList& pred, const EventList& ref,
                                double thresh, int seg_len, int n_classes) {
  int max_seg = 0;
  for (const auto& e : pred) max_seg = std::max(max_seg, e.frame / seg_len + 1);
  for (const auto& e : ref) max_seg = std::max(max_seg, e.frame / seg_len + 1);

  std::int64_t tp = 0, fp = 0, fn = 0, sdi = 0, n_ref = 0;
  for (int s = 0; s < max_seg; ++s) {
    std::int64_t seg_fp = 0, seg_fn = 0;
    for (int c = 0; c < n_classes; ++c) {
      std::vector<FrameEvent> p_list, r_list;
      for (const auto& e : pred) {
        if (e.frame / seg_len == s && e.class_id == c) p_list.push_back(e);
      }
      for (const auto& e : ref) {
        if (e.frame / seg_len == s && e.class_id == c) r_list.push_back(e);
      }
      if (!r_list.empty()) ++n_ref;
      if (p_list.empty() && r_list.empty()) continue;
      if (!p_list.empty() && r_list.empty()) {
        ++seg_fp;
      } else if (p_list.empty() && !r_list.empty()) {
        ++seg_fn;
      } else {
        double best = 1e300;
        for (const auto& p : p_list) {
          for (const auto& r : r_list) best = std::min(best, oracle_angle(p, r));
        }
        if (best <= thresh) {
          ++tp;
        } else {
          ++seg_fp;
          ++seg_fn;
        }
      }
    }
    fp += seg_fp;
    fn += seg_fn;
    sdi += std::min(seg_fp, seg_fn) + std::max<std::int64_t>(0, seg_fn - seg_fp) +
           std::max<std::int64_t>(0, seg_fp - seg_fn);
  }
  OracleErF1 out;
  out.tp = tp;
  out.fp = fp;
  out.fn = fn;
  out.er = n_ref > 0 ? static_cast<double>(sdi) / static_cast<double>(n_ref)
                     : (fp > 0 ? 1.0 : 0.0);
  const double denom = static_cast<double>(2 * tp + fp + fn);
  out.f1 = denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 1.0;
  return out;
}

/// Exhaustive min-cost matching by permutation enumeration.
double oracle_min_assignment_cost(const std::vector<FrameEvent>& p_list,
                                  const std::vector<FrameEvent>& r_list,
                                  std::int64_t* matched) {
  const std::size_t np = p_list.size(), nr = r_list.size();
  const std::size_t k = std::min(np, nr);
  *matched += static_cast<std::int64_t>(k);
  if (k == 0) return 0.0;
  // Enumerate ordered selections from the larger side.
  std::vector<int> big(std::max(np, nr));
  std::iota(big.begin(), big.end(), 0);
  double best = 1e300;
  std::sort(big.begin(), big.end());
  do {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& p = np <= nr ? p_list[i] : p_list[static_cast<std::size_t>(big[i])];
      const auto& r = np <= nr ? r_list[static_cast<std::size_t>(big[i])] : r_list[i];
      acc += oracle_angle(p, r);
    }
    best = std::min(best, acc);
  } while (std::next_permutation(big.begin(), big.end()));
  return best;
}

struct OracleDeFr {
  double de, fr;
};

OracleDeFr oracle_class_de_fr(const EventList& pred, const EventList& ref,
                              int n_classes) {
  double de_acc = 0.0, fr_acc = 0.0;
  int scored = 0;
  for (int c = 0; c < n_classes; ++c) {
    std::int64_t ref_total = 0, matched = 0;
    double err = 0.0;
    std::map<int, std::vector<FrameEvent>> ref_frames, pred_frames;
    for (const auto& e : ref) {
      if (e.class_id == c) ref_frames[e.frame].push_back(e);
    }
    for (const auto& e : pred) {
      if (e.class_id == c) pred_frames[e.frame].push_back(e);
    }
    for (const auto& [frame, r_list] : ref_frames) {
      ref_total += static_cast<std::int64_t>(r_list.size());
      const auto pit = pred_frames.find(frame);
      if (pit == pred_frames.end()) continue;
      err += oracle_min_assignment_cost(pit->second, r_list, &matched);
    }
    if (ref_total == 0) continue;
    ++scored;
    de_acc += matched > 0 ? err / static_cast<double>(matched) : 180.0;
    fr_acc += static_cast<double>(matched) / static_cast<double>(ref_total);
  }
  if (scored == 0) return {180.0, 0.0};
  return {de_acc / scored, fr_acc / scored};
}

EventList random_instance(Rng& rng, int n_classes, int n_frames, int max_per_frame) {
  EventList out;
  for (int f = 0; f < n_frames; ++f) {
    const int count = static_cast<int>(rng.uniform_int(0, max_per_frame));
    for (int k = 0; k < count; ++k) {
      FrameEvent e;
      e.frame = f;
      e.class_id = static_cast<int>(rng.uniform_int(0, n_classes - 1));
      e.azimuth_deg = -180.0 + 5.0 * static_cast<double>(rng.uniform_int(0, 71));
      e.elevation_deg = -45.0 + 5.0 * static_cast<double>(rng.uniform_int(0, 18));
      out.push_back(e);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("angular distance basics") {
  const auto ex = DirectionGrid::unit_vector(0.0, 0.0);
  const auto ey = DirectionGrid::unit_vector(90.0, 0.0);
  CHECK(angular_distance_deg(ex, ex) == doctest::Approx(0.0));
  CHECK(angular_distance_deg(ex, ey) == doctest::Approx(90.0));

  const auto a = DirectionGrid::unit_vector(10.0, 0.0);
  const auto b = DirectionGrid::unit_vector(30.0, 0.0);
  CHECK(angular_distance_deg(a, b) == doctest::Approx(20.0).epsilon(1e-9));

  CHECK_THROWS_AS(angular_distance_deg({0.5, 0.0, 0.0}, ex), ShapeError);
}

TEST_CASE("segment metrics on hand-enumerated cases") {
  EventList ref;
  for (int f = 0; f < 10; ++f) ref.push_back({f, 2, 40.0, 10.0, 1.0, true});

  SUBCASE("perfect prediction") {
    const auto m = segment_er_f1(ref, ref);
    CHECK(m.er == doctest::Approx(0.0));
    CHECK(m.f1 == doctest::Approx(1.0));
    CHECK(m.counts.tp == 1);
  }

  SUBCASE("single class predicted 25 degrees off: one substitution") {
    EventList pred;
    for (int f = 0; f < 10; ++f) pred.push_back({f, 2, 65.0, 10.0, 1.0, true});
    const auto m = segment_er_f1(pred, ref);
    CHECK(m.counts.subs == 1);
    CHECK(m.er == doctest::Approx(1.0));
    CHECK(m.f1 == doctest::Approx(0.0));
  }

  SUBCASE("empty prediction: one deletion") {
    const auto m = segment_er_f1({}, ref);
    CHECK(m.counts.dels == 1);
    CHECK(m.er == doctest::Approx(1.0));
    CHECK(m.f1 == doctest::Approx(0.0));
  }
}

TEST_CASE("class DE/FR on hand cases") {
  EventList ref;
  for (int f = 0; f < 10; ++f) ref.push_back({f, 1, 0.0, 0.0, 1.0, true});

  SUBCASE("perfect") {
    const auto m = class_de_fr(ref, ref);
    CHECK(m.de_deg == doctest::Approx(0.0));
    CHECK(m.fr == doctest::Approx(1.0));
  }

  SUBCASE("constant 20-degree error, always detected") {
    EventList pred;
    for (int f = 0; f < 10; ++f) pred.push_back({f, 1, 20.0, 0.0, 1.0, true});
    const auto m = class_de_fr(pred, ref);
    CHECK(m.de_deg == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(m.fr == doctest::Approx(1.0));
  }

  SUBCASE("never-detected class contributes DE 180 and FR 0") {
    const auto m = class_de_fr({}, ref);
    CHECK(m.de_deg == doctest::Approx(180.0));
    CHECK(m.fr == doctest::Approx(0.0));
  }
}

TEST_CASE("seld score formula and paper row") {
  CHECK(seld_score(0.0, 1.0, 0.0, 1.0) == 0.0);
  CHECK(seld_score(1.0, 0.0, 180.0, 0.0) == 1.0);
  const double s = seld_score(0.424, 0.641, 18.2, 0.801);
  CHECK(s == doctest::Approx(0.2708).epsilon(1e-3));
  CHECK(std::abs(s - 0.2708) < 1e-4);
  CHECK(std::abs(s - 0.267) < 5e-3);
  CHECK_THROWS_AS(seld_score(-0.1, 0.5, 10.0, 0.5), ConfigError);
  CHECK_THROWS_AS(seld_score(0.1, 0.5, 200.0, 0.5), ConfigError);
}

TEST_CASE("seld score is monotone in each argument") {
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    const double er = rng.uniform(0.0, 1.5);
    const double f1 = rng.uniform();
    const double de = rng.uniform(0.0, 180.0);
    const double fr = rng.uniform();
    const double base = seld_score(er, f1, de, fr);
    CHECK(seld_score(std::min(er + 0.1, 1.5), f1, de, fr) >= base);
    CHECK(seld_score(er, std::max(0.0, f1 - 0.1), de, fr) >= base);
    CHECK(seld_score(er, f1, std::min(180.0, de + 5.0), fr) >= base);
    CHECK(seld_score(er, f1, de, std::max(0.0, fr - 0.1)) >= base);
  }
}

TEST_CASE("map score: perfect, single positive, prevalence limit") {
  const int k = 19;
  const int frames = 200;
  std::vector<double> probs(static_cast<std::size_t>(frames) * k, 0.0);
  std::vector<double> targets(static_cast<std::size_t>(frames) * k, 0.0);
  Rng rng(67);
  for (int f = 0; f < frames; ++f) {
    const int cls = static_cast<int>(rng.uniform_int(0, k - 1));
    targets[static_cast<std::size_t>(f) * k + cls] = 1.0;
    probs[static_cast<std::size_t>(f) * k + cls] = 1.0;
  }
  CHECK(map_score(probs, targets, k) == doctest::Approx(1.0));

  // Single positive ranked first.
  std::vector<double> p2(static_cast<std::size_t>(frames), 0.0);
  std::vector<double> t2(static_cast<std::size_t>(frames), 0.0);
  p2[17] = 0.99;
  t2[17] = 1.0;
  CHECK(map_score(p2, t2, 1) == doctest::Approx(1.0));

  // Random scores: AP approaches prevalence.
  const int big = 10000;
  std::vector<double> pr(static_cast<std::size_t>(big));
  std::vector<double> tr(static_cast<std::size_t>(big), 0.0);
  const double prevalence = 0.3;
  for (int f = 0; f < big; ++f) {
    pr[static_cast<std::size_t>(f)] = rng.uniform();
    if (rng.uniform() < prevalence) tr[static_cast<std::size_t>(f)] = 1.0;
  }
  CHECK(map_score(pr, tr, 1) == doctest::Approx(prevalence).epsilon(0.17));
  CHECK(std::abs(map_score(pr, tr, 1) - prevalence) < 0.05);

  std::vector<double> no_pos(static_cast<std::size_t>(frames) * k, 0.0);
  CHECK_THROWS_AS(map_score(probs, no_pos, k), ConfigError);
}

TEST_CASE("hungarian assignment equals exhaustive enumeration") {
  Rng rng(71);
  for (int trial = 0; trial < 300; ++trial) {
    const int rows = static_cast<int>(rng.uniform_int(1, 4));
    const int cols = static_cast<int>(rng.uniform_int(1, 4));
    std::vector<double> cost(static_cast<std::size_t>(rows) * cols);
    for (auto& v : cost) v = rng.uniform(0.0, 100.0);

    const auto assign = min_cost_assignment(cost, rows, cols);
    double got = 0.0;
    int assigned = 0;
    for (int i = 0; i < rows; ++i) {
      if (assign[static_cast<std::size_t>(i)] >= 0) {
        got += cost[static_cast<std::size_t>(i) * cols + assign[static_cast<std::size_t>(i)]];
        ++assigned;
      }
    }
    CHECK(assigned == std::min(rows, cols));

    // Exhaustive minimum over ordered selections of the larger side.
    std::vector<int> big(static_cast<std::size_t>(std::max(rows, cols)));
    std::iota(big.begin(), big.end(), 0);
    double best = 1e300;
    do {
      double acc = 0.0;
      for (int i = 0; i < std::min(rows, cols); ++i) {
        const int r = rows <= cols ? i : big[static_cast<std::size_t>(i)];
        const int c = rows <= cols ? big[static_cast<std::size_t>(i)] : i;
        acc += cost[static_cast<std::size_t>(r) * cols + c];
      }
      best = std::min(best, acc);
    } while (std::next_permutation(big.begin(), big.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("metric oracle equivalence on random small instances") {
  Rng rng(73);
  for (int trial = 0; trial < 300; ++trial) {
    const int n_classes = static_cast<int>(rng.uniform_int(1, 3));
    const int n_frames = static_cast<int>(rng.uniform_int(1, 10));
    const auto pred = random_instance(rng, n_classes, n_frames, 2);
    const auto ref = random_instance(rng, n_classes, n_frames, 2);

    const auto got = segment_er_f1(pred, ref, 20.0, 10, n_classes);
    const auto want = oracle_segment_er_f1(pred, ref, 20.0, 10, n_classes);
    CHECK(got.counts.tp == want.tp);
    CHECK(got.counts.fp == want.fp);
    CHECK(got.counts.fn == want.fn);
    CHECK(got.er == doctest::Approx(want.er).epsilon(1e-12));
    CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));

    const auto got_defr = class_de_fr(pred, ref, n_classes);
    const auto want_defr = oracle_class_de_fr(pred, ref, n_classes);
    CHECK(got_defr.de_deg == doctest::Approx(want_defr.de).epsilon(1e-9));
    CHECK(got_defr.fr == doctest::Approx(want_defr.fr).epsilon(1e-9));
  }
}

TEST_CASE("evaluate is pure and its json serialization is deterministic") {
  Rng rng(79);
  const auto pred = random_instance(rng, 3, 10, 2);
  const auto ref = random_instance(rng, 3, 10, 2);
  const auto r1 = evaluate(pred, ref);
  const auto r2 = evaluate(pred, ref);
  CHECK(r1.seld == r2.seld);
  CHECK(report_to_json(r1) == report_to_json(r2));
  CHECK(r1.seld ==
        seld_score(std::min(r1.er, 1.0), r1.f1, r1.de_deg, r1.fr));
}
