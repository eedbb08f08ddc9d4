// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "seldkit/common.hpp"

namespace seldkit {

/// 16-bit PCM RIFF/WAVE, interleaved channels.
void write_wav(const std::filesystem::path& path, const MultichannelClip& clip);
MultichannelClip read_wav(const std::filesystem::path& path);

}  // namespace seldkit
