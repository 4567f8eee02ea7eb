/* Copyright (c) 2026 The WaveFlow Engine Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

// Mono 16-bit PCM RIFF/WAVE reader and writer (little-endian on disk).

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "waveflow/errors.hpp"
#include "waveflow/signal.hpp"

namespace waveflow::wav {

namespace detail {

inline std::uint32_t read_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const std::uint8_t* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace detail

/// Decodes an in-memory WAV file. Unknown chunks are skipped.
inline Waveform decode(const std::vector<std::uint8_t>& bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw ValidationError("wav: not a RIFF/WAVE file");

  Waveform out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t len = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw ValidationError("wav: truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw ValidationError("wav: fmt chunk too short");
      const std::uint8_t* f = bytes.data() + body;
      const std::uint16_t format = read_u16(f);
      const std::uint16_t channels = read_u16(f + 2);
      const std::uint16_t bits = read_u16(f + 14);
      if (format != 1) throw ValidationError("wav: only PCM is supported (format tag " + std::to_string(format) + ")");
      if (channels != 1) throw ValidationError("wav: only mono audio is supported");
      if (bits != 16) throw ValidationError("wav: only 16-bit samples are supported");
      out.sample_rate = read_u32(f + 4);
      if (out.sample_rate == 0) throw ValidationError("wav: zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw ValidationError("wav: data chunk before fmt chunk");
      const std::size_t n = len / 2;
      out.samples.resize(n);
      for (std::size_t k = 0; k < n; ++k)
        out.samples[k] = pcm16_to_unit(static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * k)));
      return out;
    }
    pos = body + len + (len & 1u);
  }
  throw ValidationError("wav: no data chunk");
}

inline std::vector<std::uint8_t> encode(const Waveform& x) {
  using namespace detail;
  const auto data_bytes = static_cast<std::uint32_t>(x.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, x.sample_rate);
  put_u32(out, x.sample_rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : x.samples) put_u16(out, static_cast<std::uint16_t>(unit_to_pcm16(s)));
  return out;
}

inline Waveform read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("wav: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

inline void write(const std::string& path, const Waveform& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("wav: cannot write " + path);
  const auto bytes = encode(x);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace waveflow::wav
