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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "waveflow/errors.hpp"
#include "waveflow/tensor.hpp"

namespace waveflow {

/// Mono audio. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  std::uint32_t sample_rate = 22050;

  std::size_t size() const noexcept { return samples.size(); }
  double seconds() const { return sample_rate ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

/// h x w matrix, stored row-major: values[i * w + j].
template <class T>
struct WaveGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> values;

  WaveGrid() = default;
  WaveGrid(std::size_t rows, std::size_t cols, T fill = T{0}) : h(rows), w(cols), values(rows * cols, fill) {}

  T& operator()(std::size_t i, std::size_t j) { return values[i * w + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return values[i * w + j]; }
  std::span<T> row(std::size_t i) { return {values.data() + i * w, w}; }
  std::span<const T> row(std::size_t i) const { return {values.data() + i * w, w}; }
  std::size_t size() const noexcept { return values.size(); }

  /// View as a single-channel [1, h, w] tensor.
  Tensor<T> as_tensor() const { return Tensor<T>({1, h, w}, values); }
  static WaveGrid from_tensor(const Tensor<T>& t, std::size_t channel = 0) {
    WaveGrid g(t.dim(1), t.dim(2));
    const std::size_t plane = g.h * g.w;
    std::copy(t.data() + channel * plane, t.data() + (channel + 1) * plane, g.values.data());
    return g;
  }
};

struct PaddedWaveform {
  Waveform waveform;
  std::size_t pad_count = 0;
};

/// Zero-pads the tail up to the next multiple of h.
inline PaddedWaveform pad_to_multiple(const Waveform& x, std::size_t h) {
  if (h == 0) throw ValidationError("pad_to_multiple: h must be positive");
  PaddedWaveform out{x, 0};
  const std::size_t rem = x.size() % h;
  if (rem != 0) {
    out.pad_count = h - rem;
    out.waveform.samples.resize(x.size() + out.pad_count, 0.0);
  }
  return out;
}

/// Column-major squeeze: X(i, j) = x[j*h + i].
template <class T>
WaveGrid<T> squeeze(std::span<const double> x, std::size_t h) {
  if (h == 0) throw ValidationError("squeeze: h must be positive");
  if (x.empty()) throw ValidationError("squeeze: empty waveform");
  if (x.size() % h != 0)
    throw ValidationError("squeeze: length " + std::to_string(x.size()) + " is not divisible by h=" +
                          std::to_string(h) + " (remainder " + std::to_string(x.size() % h) +
                          "); pad_to_multiple first");
  WaveGrid<T> X(h, x.size() / h);
  for (std::size_t j = 0; j < X.w; ++j)
    for (std::size_t i = 0; i < h; ++i) X(i, j) = static_cast<T>(x[j * h + i]);
  return X;
}

template <class T>
WaveGrid<T> squeeze(const Waveform& x, std::size_t h) {
  return squeeze<T>(std::span<const double>(x.samples), h);
}

template <class T>
Waveform unsqueeze(const WaveGrid<T>& X, std::uint32_t sample_rate = 22050) {
  Waveform x;
  x.sample_rate = sample_rate;
  x.samples.resize(X.h * X.w);
  for (std::size_t j = 0; j < X.w; ++j)
    for (std::size_t i = 0; i < X.h; ++i) x.samples[j * X.h + i] = static_cast<double>(X(i, j));
  return x;
}

/// Row permutation over the height axis: output row row_map[i] takes input row i.
struct Permutation {
  enum class Kind { Identity, Reverse, BipartiteReverse, Custom };

  Kind kind = Kind::Identity;
  std::vector<std::size_t> row_map;

  static Permutation identity(std::size_t h) {
    Permutation p{Kind::Identity, std::vector<std::size_t>(h)};
    for (std::size_t i = 0; i < h; ++i) p.row_map[i] = i;
    return p;
  }

  static Permutation reverse(std::size_t h) {
    Permutation p{Kind::Reverse, std::vector<std::size_t>(h)};
    for (std::size_t i = 0; i < h; ++i) p.row_map[i] = h - 1 - i;
    return p;
  }

  /// Split rows into [0, ceil(h/2)) and the rest; reverse each part in place.
  static Permutation bipartite_reverse(std::size_t h) {
    Permutation p{Kind::BipartiteReverse, std::vector<std::size_t>(h)};
    const std::size_t first = (h + 1) / 2;
    for (std::size_t i = 0; i < first; ++i) p.row_map[i] = first - 1 - i;
    for (std::size_t i = first; i < h; ++i) p.row_map[i] = h - 1 - (i - first);
    return p;
  }

  std::size_t size() const noexcept { return row_map.size(); }

  bool is_bijection() const {
    std::vector<bool> seen(row_map.size(), false);
    for (std::size_t r : row_map) {
      if (r >= row_map.size() || seen[r]) return false;
      seen[r] = true;
    }
    return true;
  }

  Permutation inverse() const {
    Permutation p{kind == Kind::Identity || kind == Kind::Reverse || kind == Kind::BipartiteReverse ? kind
                                                                                                  : Kind::Custom,
                  std::vector<std::size_t>(row_map.size())};
    for (std::size_t i = 0; i < row_map.size(); ++i) p.row_map[row_map[i]] = i;
    return p;
  }

  /// Row order of the output listed by source row: order()[r] = source of output row r.
  std::vector<std::size_t> order() const { return inverse().row_map; }

  std::string name() const {
    switch (kind) {
      case Kind::Identity: return "identity";
      case Kind::Reverse: return "reverse";
      case Kind::BipartiteReverse: return "bipartite_reverse";
      case Kind::Custom: return "custom";
    }
    return "custom";
  }
};

template <class T>
WaveGrid<T> permute_rows(const WaveGrid<T>& X, const Permutation& p) {
  if (p.size() != X.h)
    throw ValidationError("permute_rows: permutation of size " + std::to_string(p.size()) + " for grid height " +
                          std::to_string(X.h));
  WaveGrid<T> out(X.h, X.w);
  for (std::size_t i = 0; i < X.h; ++i) std::copy(X.row(i).begin(), X.row(i).end(), out.row(p.row_map[i]).begin());
  return out;
}

/// 16-bit PCM -> [-1, 1).
inline double pcm16_to_unit(std::int16_t s) { return static_cast<double>(s) / 32768.0; }

inline std::int16_t unit_to_pcm16(double v) {
  const double scaled = std::round(v * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace waveflow
