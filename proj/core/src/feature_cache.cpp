// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/feature_cache.hpp"

#include <cstring>
#include <fstream>

namespace seldkit::dsp {

namespace {
constexpr char kMagic[8] = {'S', 'E', 'L', 'D', 'K', 'F', 'E', 'A'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_feature(const std::filesystem::path& path, const FeatureArray& f) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_feature: cannot open " + path.string());
  os.write(kMagic, 8);
  auto write_u32 = [&](std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  write_u32(kVersion);
  write_u32(static_cast<std::uint32_t>(f.kind.size()));
  os.write(f.kind.data(), static_cast<std::streamsize>(f.kind.size()));
  write_u32(static_cast<std::uint32_t>(f.shape.size()));
  std::uint64_t count = 1;
  for (int d : f.shape) {
    unsigned char b[8];
    const auto v = static_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
    count *= v;
  }
  if (count != f.data.size()) throw ShapeError("save_feature: shape/data mismatch");
  static_assert(sizeof(double) == 8);
  os.write(reinterpret_cast<const char*>(f.data.data()),
           static_cast<std::streamsize>(f.data.size() * 8));
  if (!os) throw IoError("save_feature: write failed " + path.string());
}

namespace {

FeatureArray load_feature_impl(const std::filesystem::path& path, bool header_only);

}  // namespace

FeatureArray load_feature(const std::filesystem::path& path) {
  return load_feature_impl(path, false);
}

FeatureArray peek_feature(const std::filesystem::path& path) {
  return load_feature_impl(path, true);
}

namespace {

FeatureArray load_feature_impl(const std::filesystem::path& path, bool header_only) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_feature: cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("load_feature: bad magic in " + path.string());
  }
  auto read_u32 = [&]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("load_feature: truncated " + path.string());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  };
  const std::uint32_t version = read_u32();
  if (version != kVersion) {
    throw IoError("load_feature: unsupported version " + std::to_string(version));
  }
  FeatureArray f;
  const std::uint32_t kind_len = read_u32();
  f.kind.resize(kind_len);
  is.read(f.kind.data(), kind_len);
  const std::uint32_t ndim = read_u32();
  if (ndim > 8) throw IoError("load_feature: implausible rank");
  std::uint64_t count = 1;
  f.shape.resize(ndim);
  for (auto& d : f.shape) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("load_feature: truncated " + path.string());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    d = static_cast<int>(v);
    count *= v;
  }
  if (header_only) return f;
  f.data.resize(count);
  is.read(reinterpret_cast<char*>(f.data.data()), static_cast<std::streamsize>(count * 8));
  if (!is) throw IoError("load_feature: truncated data " + path.string());
  return f;
}

}  // namespace

std::filesystem::path feature_path(const std::filesystem::path& cache_root,
                                   const std::string& clip_stem,
                                   const std::string& kind) {
  return cache_root / (clip_stem + "." + kind + ".feat");
}

}  // namespace seldkit::dsp
