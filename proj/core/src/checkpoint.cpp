// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace seldkit::nn {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'L', 'D', 'K', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64(os, v);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  const std::uint64_t v = read_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

std::string read_string(std::istream& is) {
  const std::uint32_t len = read_u32(is);
  if (len > (1u << 20)) throw IoError("checkpoint: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw IoError("checkpoint: truncated string");
  return s;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path.string());
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_string(os, ckpt.kind);
  write_u32(os, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    write_string(os, r.name);
    write_u32(os, static_cast<std::uint32_t>(r.shape.size()));
    std::uint64_t count = 1;
    for (int d : r.shape) {
      write_u64(os, static_cast<std::uint64_t>(d));
      count *= static_cast<std::uint64_t>(d);
    }
    if (count != r.values.size()) {
      throw ShapeError("checkpoint: record " + r.name + " shape/value mismatch");
    }
    for (double v : r.values) write_f64(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.kind = read_string(is);
  const std::uint32_t n = read_u32(is);
  ckpt.records.resize(n);
  for (auto& r : ckpt.records) {
    r.name = read_string(is);
    const std::uint32_t ndim = read_u32(is);
    if (ndim > 8) throw IoError("checkpoint: implausible rank");
    std::uint64_t count = 1;
    r.shape.resize(ndim);
    for (auto& d : r.shape) {
      const std::uint64_t v = read_u64(is);
      d = static_cast<int>(v);
      count *= v;
    }
    r.values.resize(count);
    for (auto& v : r.values) v = read_f64(is);
  }
  return ckpt;
}

}  // namespace seldkit::nn
