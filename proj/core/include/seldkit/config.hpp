// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seldkit/models.hpp"
#include "seldkit/scene.hpp"
#include "seldkit/train.hpp"

namespace seldkit::config {

struct FeatureSection {
  std::string cache_dir;  // empty: resolved from SELDKIT_CACHE or <data>/cache
  std::vector<std::string> kinds = {"logmel128", "iv128"};
};

struct ModelSection {
  std::string kind;
  seld::CrnnSpec spec;
  train::TrainConfig train;
};

struct AlignSection {
  int gru_hidden = 64;
  train::TrainConfig train;
};

/// Whole-run configuration consumed by the CLI. Config files reject unknown
/// keys at any depth.
struct RunConfig {
  std::uint64_t seed = 20260810;
  scene::AudioFormat format = scene::AudioFormat::kFoa;
  double threshold = 0.3;
  scene::DatasetConfig dataset;
  FeatureSection features;
  ModelSection sed;
  ModelSection doa;
  AlignSection align;

  /// Desk-scale defaults: reduced widths, small synthetic corpus.
  static RunConfig defaults();
  static RunConfig from_file(const std::filesystem::path& path);

  /// Cache root resolution: explicit value > SELDKIT_CACHE > <data>/cache.
  std::filesystem::path cache_root() const;
};

}  // namespace seldkit::config
