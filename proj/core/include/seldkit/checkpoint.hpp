// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "seldkit/tensor.hpp"

namespace seldkit::nn {

/// One named parameter or buffer inside a checkpoint.
struct CheckpointRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string kind;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

/// Versioned little-endian binary container; byte layout in docs/FORMATS.md.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seldkit::nn
