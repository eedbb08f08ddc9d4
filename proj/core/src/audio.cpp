// Copyright 2026 the seldkit authors
// SPDX-License-Identifier: Apache-2.0

#include "seldkit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace seldkit {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>(v >> 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const MultichannelClip& clip) {
  const auto n_ch = static_cast<std::uint16_t>(clip.n_channels());
  const auto n_samples = clip.n_samples();
  if (n_ch == 0) throw IoError("write_wav: clip has no channels");

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(n_samples) * n_ch * 2;
  std::string buf;
  buf.reserve(44 + data_bytes);
  buf.append("RIFF");
  put_u32(buf, 36 + data_bytes);
  buf.append("WAVEfmt ");
  put_u32(buf, 16);
  put_u16(buf, 1);  // PCM
  put_u16(buf, n_ch);
  put_u32(buf, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(buf, static_cast<std::uint32_t>(clip.sample_rate) * n_ch * 2);
  put_u16(buf, static_cast<std::uint16_t>(n_ch * 2));
  put_u16(buf, 16);
  buf.append("data");
  put_u32(buf, data_bytes);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    for (std::uint16_t c = 0; c < n_ch; ++c) {
      const double x = clip.channels[c][static_cast<std::size_t>(i)];
      const double scaled = std::round(x * 32767.0);
      const auto s = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      put_u16(buf, static_cast<std::uint16_t>(s));
    }
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_wav: cannot open " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write_wav: write failed " + path.string());
}

MultichannelClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_wav: cannot open " + path.string());
  std::string raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  if (raw.size() < 44 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw IoError("read_wav: not a RIFF/WAVE file: " + path.string());
  }

  std::size_t off = 12;
  int n_ch = 0, sample_rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;
  while (off + 8 <= raw.size()) {
    const std::uint32_t chunk_len = get_u32(p + off + 4);
    if (std::memcmp(p + off, "fmt ", 4) == 0) {
      if (get_u16(p + off + 8) != 1) throw IoError("read_wav: only PCM supported");
      n_ch = get_u16(p + off + 10);
      sample_rate = static_cast<int>(get_u32(p + off + 12));
      bits = get_u16(p + off + 22);
    } else if (std::memcmp(p + off, "data", 4) == 0) {
      data = p + off + 8;
      data_len = chunk_len;
    }
    off += 8 + chunk_len + (chunk_len & 1);
  }
  if (n_ch == 0 || data == nullptr) throw IoError("read_wav: missing fmt/data chunk");
  if (bits != 16) throw IoError("read_wav: only 16-bit PCM supported");

  MultichannelClip clip;
  clip.sample_rate = sample_rate;
  const std::uint32_t n_frames = data_len / (static_cast<std::uint32_t>(n_ch) * 2);
  clip.channels.assign(static_cast<std::size_t>(n_ch), std::vector<double>(n_frames));
  for (std::uint32_t i = 0; i < n_frames; ++i) {
    for (int c = 0; c < n_ch; ++c) {
      const auto s = static_cast<std::int16_t>(get_u16(data + (static_cast<std::size_t>(i) * n_ch + c) * 2));
      clip.channels[static_cast<std::size_t>(c)][i] = static_cast<double>(s) / 32767.0;
    }
  }
  return clip;
}

}  // namespace seldkit
