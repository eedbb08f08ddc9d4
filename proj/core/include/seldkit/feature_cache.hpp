// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "seldkit/dsp.hpp"

namespace seldkit::dsp {

/// Per-clip binary feature file: header (magic, version, kind, shape,
/// dtype f64-LE), then the flat data. Byte layout in docs/FORMATS.md.
void save_feature(const std::filesystem::path& path, const FeatureArray& f);
FeatureArray load_feature(const std::filesystem::path& path);
/// Header only: kind and shape, with empty data.
FeatureArray peek_feature(const std::filesystem::path& path);

/// <cache_root>/<clip_stem>.<kind>.feat
std::filesystem::path feature_path(const std::filesystem::path& cache_root,
                                   const std::string& clip_stem,
                                   const std::string& kind);

}  // namespace seldkit::dsp
