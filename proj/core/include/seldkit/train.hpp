// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seldkit/adam.hpp"
#include "seldkit/feature_cache.hpp"
#include "seldkit/models.hpp"
#include "seldkit/scene.hpp"

namespace seldkit::train {

struct AugmentPolicy {
  bool mixup = true;
  bool freq_shift = true;  // circular mel-axis shift; caller disables for
                           // lag/direction-axis features
  bool cutout = true;
  bool specaugment = true;
  double prob = 0.5;  // per-augmentation, per-sample application probability
  int max_freq_shift = 4;
};

struct TrainConfig {
  std::string stage;  // sed | doa | align
  double chunk_seconds = 4.0;
  int epochs = 60;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  int batch_size = 32;
  std::uint64_t seed = 1;
  AugmentPolicy augment;
  double loss_w_sed = 0.7;
  double loss_w_doa = 0.3;
  double chunk_fraction = 1.0;  // training chunks sampled per epoch

  int chunk_frames80() const;  // at 80 fps; must be divisible by 16
  int chunk_frames10() const;
  void validate() const;
};

/// Constant lr_start for the first 70% of the run, then linear decay
/// reaching lr_end at the final epoch.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Feature chunks of one manifest split at a fixed chunk length.
/// Chunk count per clip is floor(feature_frames / chunk_frames); targets are
/// the clip targets restricted to the chunk window. Clips whose labels the
/// class-wise format cannot represent are skipped with a warning.
class ChunkDataset {
 public:
  ChunkDataset(const scene::DatasetManifest& manifest, const std::string& split,
               std::vector<std::string> feature_kinds,
               std::filesystem::path cache_root, double chunk_seconds);

  struct Item {
    // One entry per requested feature kind, [C, T80, F] each.
    std::vector<dsp::FeatureArray> features;
    seld::FrameTargets targets;
  };

  int num_chunks() const { return static_cast<int>(chunks_.size()); }
  int num_clips() const { return static_cast<int>(clips_.size()); }
  Item get(int chunk_index) const;

  /// Clip-major chunk order shuffled per epoch: clips shuffled, then chunks
  /// within each clip, so sequential access stays cache-friendly.
  std::vector<int> epoch_order(std::uint64_t seed, double fraction) const;

 private:
  struct ClipEntry {
    std::string stem;
    std::filesystem::path label_path;
    seld::FrameTargets targets;
    int n_chunks = 0;
  };
  struct ChunkRef {
    int clip = 0;
    int index = 0;  // within clip
  };

  const dsp::FeatureArray& clip_feature(int clip, const std::string& kind) const;

  std::vector<std::string> kinds_;
  std::filesystem::path cache_root_;
  int chunk_frames80_ = 0;
  int chunk_frames10_ = 0;
  std::vector<ClipEntry> clips_;
  std::vector<ChunkRef> chunks_;

  // Small per-dataset feature cache keyed by (clip, kind); clip-major epoch
  // order keeps at most a few clips resident.
  mutable std::map<std::pair<int, std::string>, dsp::FeatureArray> resident_;
  mutable std::vector<int> resident_age_;
};

/// In-place stage-1 augmentation of a feature batch [N,C,T,F] and its
/// matching sed/azi/ele target rows. Mixup reweights targets; the other
/// augmentations leave targets untouched.
struct BatchTargets {
  std::vector<double> sed;  // [N*T10*14]
  std::vector<double> azi;  // [N*T10*72]
  std::vector<double> ele;  // [N*T10*19]
  std::vector<double> xyz;  // [N*T10*14*3]
  std::vector<double> mask; // [N*T10*14]
};

void augment_batch(std::vector<double>& features, const std::vector<int>& shape,
                   BatchTargets& targets, const AugmentPolicy& policy, Rng& rng);

struct TraceRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<TraceRow>& trace);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path trace_csv;
  double best_val_loss = 0.0;
  int best_epoch = -1;
  std::vector<TraceRow> trace;
};

struct Stage1Options {
  std::string model_kind;  // sed-m | sed-t | doa-iv | doa-gcc | azi-hist | ele-hist
  seld::CrnnSpec spec;
  TrainConfig config;
  scene::DatasetManifest manifest;
  std::filesystem::path cache_root;
  std::filesystem::path out_dir;
  /// Transfer hook: initialize conv blocks from this checkpoint's matching
  /// records before training.
  std::optional<std::filesystem::path> init_conv_from;
};

TrainResult train_stage1(const Stage1Options& opt);

struct Stage2Options {
  std::filesystem::path sed_ckpt;
  std::vector<std::filesystem::path> doa_ckpts;  // {doa} or {azi-hist, ele-hist}
  int align_gru_hidden = 128;
  TrainConfig config;
  scene::DatasetManifest manifest;
  std::filesystem::path cache_root;
  std::filesystem::path out_dir;
};

/// Trains the alignment network over frozen upstream modules. Upstream
/// outputs are computed once in eval mode with gradients blocked at the
/// fuse boundary; stage-1 checkpoints are never rewritten.
TrainResult train_stage2_alignment(const Stage2Options& opt);

/// Computes and caches the requested feature kinds for every manifest clip.
/// Kinds: logmel128, logmel64, iv128, gcc128, azihist, elehist.
void extract_features(const scene::DatasetManifest& manifest,
                      const std::vector<std::string>& kinds,
                      const std::filesystem::path& cache_root, bool force);

/// Histogram features are fed to the networks L1-normalized per frame.
void normalize_hist_frames(dsp::FeatureArray& f);

/// Loaded end-to-end model set for inference.
struct SeldPipeline {
  seld::SedModel sed;
  std::optional<seld::DoaModel> doa;       // iv or gcc
  std::optional<seld::DoaModel> azi_hist;  // used with ele_hist
  std::optional<seld::DoaModel> ele_hist;
  seld::AlignModel align;

  static SeldPipeline load(const std::filesystem::path& sed_ckpt,
                           const std::vector<std::filesystem::path>& doa_ckpts,
                           const std::filesystem::path& align_ckpt);

  /// Fused upstream outputs [frames10, 105] for one clip's features,
  /// processed in 6-second windows, eval mode, no gradients.
  std::vector<double> fused_outputs(
      const std::map<std::string, dsp::FeatureArray>& features, int* frames10);

  /// Full prediction for one clip.
  seld::SeldPrediction infer_clip(const MultichannelClip& clip);

  std::vector<std::string> feature_kinds() const;
};

/// Feature extraction for one clip, restricted to the given kinds.
std::map<std::string, dsp::FeatureArray> compute_clip_features(
    const MultichannelClip& clip, const std::vector<std::string>& kinds);

}  // namespace seldkit::train
