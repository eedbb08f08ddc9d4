// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "seldkit/train.hpp"

using namespace seldkit;
using namespace seldkit::train;

namespace {

namespace fs = std::filesystem;

std::uint64_t hash_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (is.get(c)) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

/// Shared tiny corpus: 3 train + 2 val clips of 30 s, 4 classes.
struct TinyCorpus {
  fs::path root;
  fs::path cache;
  scene::DatasetManifest manifest;

  TinyCorpus() {
    root = fs::temp_directory_path() / "seldkit_train_corpus";
    cache = root / "cache";
    if (!fs::exists(root / "manifest.csv")) {
      scene::DatasetConfig cfg;
      cfg.out_dir = root;
      cfg.train_clips = 3;
      cfg.val_clips = 2;
      cfg.test_clips = 0;
      cfg.clip_seconds = 30.0;
      cfg.n_classes = 4;
      cfg.seed = 4242;
      generate_dataset(cfg);
    }
    manifest = scene::load_manifest(root / "manifest.csv");
    extract_features(manifest, {"logmel64", "iv128"}, cache, /*force=*/false);
  }
};

TinyCorpus& corpus() {
  static TinyCorpus c;
  return c;
}

seld::CrnnSpec tiny_sed_spec() { return {{4, 8, 12, 16}, 8, 1, 1, 64}; }
seld::CrnnSpec tiny_doa_spec() { return {{4, 8, 12, 16}, 8, 2, 3, 128}; }

TrainConfig tiny_config(const std::string& stage, int epochs) {
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.chunk_seconds = stage == "align" ? 6.0 : 4.0;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = 77;
  cfg.augment.mixup = false;
  cfg.augment.freq_shift = false;
  cfg.augment.cutout = false;
  cfg.augment.specaugment = false;
  return cfg;
}

}  // namespace

TEST_CASE("lr schedule holds then decays linearly to the floor") {
  TrainConfig cfg;
  cfg.stage = "sed";
  cfg.epochs = 10;
  cfg.lr_start = 1e-3;
  cfg.lr_end = 1e-4;
  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(1e-3));
  CHECK(lr_at_epoch(cfg, 6) == doctest::Approx(1e-3));  // 0.7 * 9 = 6.3
  CHECK(lr_at_epoch(cfg, 9) == doctest::Approx(1e-4));
  for (int e = 0; e + 1 < cfg.epochs; ++e) {
    CHECK(lr_at_epoch(cfg, e) >= lr_at_epoch(cfg, e + 1) - 1e-15);
  }
  cfg.epochs = 1;
  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(1e-3));
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.stage = "sed";
  cfg.chunk_seconds = 4.0;  // 320 frames, ok
  CHECK_NOTHROW(cfg.validate());
  cfg.chunk_seconds = 4.1;  // 328 frames, not divisible by 16
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.chunk_seconds = 6.0;  // 480 frames, ok
  CHECK_NOTHROW(cfg.validate());
  cfg.stage = "bogus";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("chunk dataset slices clips into whole chunks with aligned targets") {
  auto& c = corpus();
  ChunkDataset ds(c.manifest, "train", {"logmel64"}, c.cache, 4.0);
  // 30 s clips give floor(30/4) = 7 chunks each.
  CHECK(ds.num_clips() == 3);
  CHECK(ds.num_chunks() == 21);

  ChunkDataset ds6(c.manifest, "train", {"logmel64"}, c.cache, 6.0);
  CHECK(ds6.num_chunks() == ds6.num_clips() * 4);  // 2397 frames fit 4 x 480

  // Same seed, same order; different seed differs.
  const auto o1 = ds.epoch_order(123, 1.0);
  const auto o2 = ds.epoch_order(123, 1.0);
  const auto o3 = ds.epoch_order(124, 1.0);
  CHECK(o1 == o2);
  CHECK(o1 != o3);
  CHECK(o1.size() == 21);
  CHECK(ds.epoch_order(123, 0.5).size() == 11);

  // Chunk targets equal the clip targets restricted to the window.
  const auto entry = c.manifest.split("train")[0];
  const auto rows = seld::read_event_csv(c.manifest.root / entry.label_path());
  const auto full = seld::targets_from_events(rows, 280);
  for (int chunk = 0; chunk < 7; ++chunk) {
    const auto item = ds.get(chunk);
    REQUIRE(item.targets.n_frames == 40);
    for (int f = 0; f < 40; ++f) {
      for (int cls = 0; cls < seld::kNumClasses; ++cls) {
        CHECK(item.targets.sed[static_cast<std::size_t>(f) * 14 + cls] ==
              full.sed[static_cast<std::size_t>(chunk * 40 + f) * 14 + cls]);
      }
    }
    CHECK(item.features[0].shape == std::vector<int>{1, 320, 64});
  }

  CHECK_THROWS_AS(ChunkDataset(c.manifest, "train", {"gcc128"}, c.cache, 4.0), IoError);
}

TEST_CASE("augmentations: identity edges, exact zero blocks, mixup convexity") {
  Rng make(7);
  const std::vector<int> shape = {2, 1, 40, 16};
  std::vector<double> base(2 * 40 * 16);
  for (auto& v : base) v = make.uniform(0.1, 1.0);  // strictly positive
  BatchTargets targets;
  targets.sed.assign(2 * 4 * 14, 0.0);
  targets.azi.assign(2 * 4 * 72, 0.0);
  targets.ele.assign(2 * 4 * 19, 0.0);
  targets.sed[3] = 1.0;
  targets.sed[4 * 14 * 1 + 7] = 1.0;

  SUBCASE("all switches off: exact identity") {
    auto x = base;
    auto t = targets;
    AugmentPolicy off;
    off.mixup = off.freq_shift = off.cutout = off.specaugment = false;
    Rng rng(1);
    augment_batch(x, shape, t, off, rng);
    CHECK(x == base);
    CHECK(t.sed == targets.sed);
  }

  SUBCASE("freq shift with zero range: identity") {
    auto x = base;
    auto t = targets;
    AugmentPolicy p;
    p.mixup = p.cutout = p.specaugment = false;
    p.freq_shift = true;
    p.prob = 1.0;
    p.max_freq_shift = 0;
    Rng rng(2);
    augment_batch(x, shape, t, p, rng);
    CHECK(x == base);
  }

  SUBCASE("cutout zeroes one rectangle and nothing else") {
    auto x = base;
    auto t = targets;
    AugmentPolicy p;
    p.mixup = p.freq_shift = p.specaugment = false;
    p.cutout = true;
    p.prob = 1.0;
    Rng rng(3);
    augment_batch(x, shape, t, p, rng);
    CHECK(t.sed == targets.sed);
    for (int s = 0; s < 2; ++s) {
      // Zeroed cells form a rectangle; everything else is untouched.
      int t_lo = 40, t_hi = -1, f_lo = 16, f_hi = -1;
      for (int ti = 0; ti < 40; ++ti) {
        for (int fi = 0; fi < 16; ++fi) {
          const std::size_t idx =
              static_cast<std::size_t>(s) * 40 * 16 + static_cast<std::size_t>(ti) * 16 + fi;
          if (x[idx] == 0.0) {
            t_lo = std::min(t_lo, ti);
            t_hi = std::max(t_hi, ti);
            f_lo = std::min(f_lo, fi);
            f_hi = std::max(f_hi, fi);
          }
        }
      }
      REQUIRE(t_hi >= t_lo);
      CHECK((t_hi - t_lo + 1) <= 40 / 5);
      CHECK((f_hi - f_lo + 1) <= 16 / 5 + 1);
      for (int ti = 0; ti < 40; ++ti) {
        for (int fi = 0; fi < 16; ++fi) {
          const std::size_t idx =
              static_cast<std::size_t>(s) * 40 * 16 + static_cast<std::size_t>(ti) * 16 + fi;
          const bool in_rect = ti >= t_lo && ti <= t_hi && fi >= f_lo && fi <= f_hi;
          if (in_rect) {
            CHECK(x[idx] == 0.0);
          } else {
            CHECK(x[idx] == base[idx]);
          }
        }
      }
    }
  }

  SUBCASE("mixup of identical samples is the identity") {
    std::vector<double> x(2 * 40 * 16);
    std::copy(base.begin(), base.begin() + 40 * 16, x.begin());
    std::copy(base.begin(), base.begin() + 40 * 16, x.begin() + 40 * 16);
    BatchTargets t;
    t.sed.assign(2 * 4 * 14, 0.25);
    t.azi.assign(2 * 4 * 72, 0.5);
    t.ele.assign(2 * 4 * 19, 0.75);
    const auto x0 = x;
    const auto sed0 = t.sed;
    AugmentPolicy p;
    p.freq_shift = p.cutout = p.specaugment = false;
    p.mixup = true;
    p.prob = 1.0;
    Rng rng(4);
    augment_batch(x, shape, t, p, rng);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(x0[i]));
    for (std::size_t i = 0; i < t.sed.size(); ++i) CHECK(t.sed[i] == doctest::Approx(sed0[i]));
  }

  SUBCASE("mixup produces a single consistent convex combination per sample") {
    auto x = base;
    BatchTargets t = targets;
    AugmentPolicy p;
    p.freq_shift = p.cutout = p.specaugment = false;
    p.mixup = true;
    p.prob = 1.0;
    Rng rng(5);
    augment_batch(x, shape, t, p, rng);
    for (int s = 0; s < 2; ++s) {
      const std::size_t off = static_cast<std::size_t>(s) * 40 * 16;
      const std::size_t other = static_cast<std::size_t>(1 - s) * 40 * 16;
      // Solve lambda from the first coordinate where the sources differ.
      double lam = -1.0;
      for (std::size_t i = 0; i < 40 * 16; ++i) {
        const double denom = base[off + i] - base[other + i];
        if (std::abs(denom) > 1e-9) {
          lam = (x[off + i] - base[other + i]) / denom;
          break;
        }
      }
      REQUIRE(lam >= -1e-9);
      CHECK(lam <= 1.0 + 1e-9);
      for (std::size_t i = 0; i < 40 * 16; ++i) {
        const double expected = lam * base[off + i] + (1.0 - lam) * base[other + i];
        CHECK(x[off + i] == doctest::Approx(expected).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("stage-1 smoke: loss decreases, deterministic checkpoints, trace file") {
  auto& c = corpus();
  Stage1Options opt;
  opt.model_kind = "sed-t";
  opt.spec = tiny_sed_spec();
  opt.config = tiny_config("sed", 5);
  opt.manifest = c.manifest;
  opt.cache_root = c.cache;
  opt.out_dir = c.root / "run_a";

  const auto result = train_stage1(opt);
  REQUIRE(result.trace.size() == 5);
  for (std::size_t e = 1; e < result.trace.size(); ++e) {
    CHECK(result.trace[e].train_loss < result.trace[e - 1].train_loss);
  }
  CHECK(fs::exists(result.checkpoint));
  CHECK(fs::exists(result.trace_csv));

  std::ifstream trace(result.trace_csv);
  std::string header;
  std::getline(trace, header);
  CHECK(header == "epoch,train_loss,val_loss,lr");

  // Same seed and corpus: identical checkpoint bytes.
  Stage1Options opt2 = opt;
  opt2.out_dir = c.root / "run_b";
  const auto result2 = train_stage1(opt2);
  CHECK(hash_file(result.checkpoint) == hash_file(result2.checkpoint));
  CHECK(result2.best_val_loss == result.best_val_loss);
}

TEST_CASE("stage-1 aborts on divergence with an epoch diagnostic") {
  auto& c = corpus();
  Stage1Options opt;
  opt.model_kind = "sed-t";
  opt.spec = tiny_sed_spec();
  opt.config = tiny_config("sed", 2);
  opt.config.lr_start = 1e14;
  opt.config.lr_end = 1e14;
  opt.manifest = c.manifest;
  opt.cache_root = c.cache;
  opt.out_dir = c.root / "run_diverge";
  CHECK_THROWS_AS(train_stage1(opt), DivergenceError);
}

TEST_CASE("stage-2 trains the alignment and never touches stage-1 checkpoints") {
  auto& c = corpus();

  Stage1Options sed_opt;
  sed_opt.model_kind = "sed-t";
  sed_opt.spec = tiny_sed_spec();
  sed_opt.config = tiny_config("sed", 2);
  sed_opt.manifest = c.manifest;
  sed_opt.cache_root = c.cache;
  sed_opt.out_dir = c.root / "stage1";
  const auto sed_result = train_stage1(sed_opt);

  Stage1Options doa_opt = sed_opt;
  doa_opt.model_kind = "doa-iv";
  doa_opt.spec = tiny_doa_spec();
  doa_opt.config = tiny_config("doa", 2);
  doa_opt.out_dir = c.root / "stage1";
  const auto doa_result = train_stage1(doa_opt);

  const auto sed_hash = hash_file(sed_result.checkpoint);
  const auto doa_hash = hash_file(doa_result.checkpoint);

  Stage2Options opt;
  opt.sed_ckpt = sed_result.checkpoint;
  opt.doa_ckpts = {doa_result.checkpoint};
  opt.align_gru_hidden = 8;
  opt.config = tiny_config("align", 6);
  opt.manifest = c.manifest;
  opt.cache_root = c.cache;
  opt.out_dir = c.root / "stage2";
  const auto result = train_stage2_alignment(opt);

  // Freeze contract: stage-1 files byte-identical after stage 2.
  CHECK(hash_file(sed_result.checkpoint) == sed_hash);
  CHECK(hash_file(doa_result.checkpoint) == doa_hash);

  // Training moved the loss.
  REQUIRE(result.trace.size() == 6);
  CHECK(result.best_val_loss < result.trace.front().val_loss + 1e-12);
  CHECK(result.trace.back().train_loss < result.trace.front().train_loss);

  // Kind mismatch is rejected.
  Stage2Options bad = opt;
  bad.doa_ckpts = {sed_result.checkpoint};
  CHECK_THROWS_AS(train_stage2_alignment(bad), ConfigError);
}

TEST_CASE("gradients are structurally blocked at the fuse boundary") {
  // Build tiny upstream models, fuse under no-grad, train align one step:
  // upstream parameter gradients must remain unallocated (norm zero).
  Rng rng(11);
  auto sed = seld::SedModel::make("sed-t", tiny_sed_spec(), 3);
  auto x = nn::Tensor::leaf({1, 1, 48, 64});
  for (auto& v : x->values) v = rng.normal();

  nn::TensorPtr sed_probs;
  {
    nn::NoGradGuard guard;
    sed_probs = sed.forward(x, false);
  }
  const int frames10 = sed_probs->dim(1);
  std::vector<double> azi(static_cast<std::size_t>(frames10) * 72, 0.1);
  std::vector<double> ele(static_cast<std::size_t>(frames10) * 19, 0.1);
  auto fused = seld::fuse_outputs(sed_probs->values, azi, ele, frames10);

  auto align = seld::AlignModel::make(8, 5);
  auto fused_tensor = nn::Tensor::from({1, frames10, seld::kFusedWidth}, fused);
  auto out = align.forward(fused_tensor);
  std::vector<double> sed_t(static_cast<std::size_t>(frames10) * 14, 0.0);
  std::vector<double> xyz_t(static_cast<std::size_t>(frames10) * 42, 0.0);
  std::vector<double> mask(static_cast<std::size_t>(frames10) * 14, 1.0);
  auto loss = seld::alignment_loss(out, sed_t, xyz_t, mask, 0.7, 0.3);
  nn::backward(loss);

  for (const auto& p : sed.parameters()) {
    double norm = 0.0;
    for (double g : p->grad) norm += g * g;
    CHECK(norm == 0.0);
  }
  for (const auto& p : align.parameters()) {
    CHECK(p->grad.size() == p->values.size());
  }
}

TEST_CASE("extract_features skips existing caches unless forced") {
  auto& c = corpus();
  const auto probe =
      dsp::feature_path(c.cache, c.manifest.entries[0].stem(), "logmel64");
  REQUIRE(fs::exists(probe));
  const auto t0 = fs::last_write_time(probe);
  extract_features(c.manifest, {"logmel64"}, c.cache, /*force=*/false);
  CHECK(fs::last_write_time(probe) == t0);
}
