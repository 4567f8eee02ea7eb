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

// Mel-spectrogram features and the transposed-convolution upsampler that turns
// frame-rate features into per-sample conditioner grids.

#include <fftw3.h>

#include <cmath>
#include <cstddef>
#include <mutex>
#include <numbers>
#include <vector>

#include "waveflow/autodiff.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/signal.hpp"
#include "waveflow/tensor.hpp"

namespace waveflow {

struct MelConfig {
  std::size_t n_mels = 80;
  std::size_t fft_size = 1024;
  std::size_t hop = 256;
  std::size_t window = 1024;
  double floor = 1e-5;
};

/// Log-magnitude mel energies, frame-major: values[t * n_mels + m].
struct MelSpectrogram {
  std::size_t n_frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;

  double operator()(std::size_t t, std::size_t m) const { return values[t * n_mels + m]; }

  /// Frames [first, first + count); frames past the end are filled with `fill`.
  MelSpectrogram slice(std::size_t first, std::size_t count, double fill) const {
    MelSpectrogram out{count, n_mels, std::vector<double>(count * n_mels, fill)};
    for (std::size_t t = 0; t < count && first + t < n_frames; ++t)
      std::copy(values.begin() + static_cast<std::ptrdiff_t>((first + t) * n_mels),
                values.begin() + static_cast<std::ptrdiff_t>((first + t + 1) * n_mels),
                out.values.begin() + static_cast<std::ptrdiff_t>(t * n_mels));
    return out;
  }

  /// [1, n_frames, n_mels] tensor for the upsampler.
  template <class T>
  Tensor<T> as_tensor() const {
    Tensor<T> t({1, n_frames, n_mels});
    for (std::size_t k = 0; k < values.size(); ++k) t[k] = static_cast<T>(values[k]);
    return t;
  }
};

namespace detail {
// The FFTW planner is not re-entrant.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// HTK-scale triangular filters spanning 0 Hz to Nyquist, [n_mels][fft/2 + 1].
inline std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t k = 0; k < edges.size(); ++k) edges[k] = mel_to_hz(top * static_cast<double>(k) / (n_mels + 1));
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / static_cast<double>(fft_size);
      const double up = (f - lo) / (mid - lo);
      const double down = (hi - f) / (hi - mid);
      fb[m][b] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

/// Centered STFT (reflect padding of fft/2), periodic Hann window, magnitude,
/// mel projection, log(max(., floor)). Produces ceil(len / hop) frames.
inline MelSpectrogram mel_spectrogram(const Waveform& x, const MelConfig& cfg = {}) {
  if (x.sample_rate == 0) throw ValidationError("mel_spectrogram: sample rate not set");
  if (x.size() < cfg.window)
    throw ValidationError("mel_spectrogram: waveform of " + std::to_string(x.size()) +
                          " samples is shorter than one window (" + std::to_string(cfg.window) + ")");
  if (cfg.window > cfg.fft_size) throw ValidationError("mel_spectrogram: window larger than FFT size");
  const std::size_t n = x.size();
  const std::size_t N = cfg.fft_size;
  const std::size_t bins = N / 2 + 1;
  const std::size_t pad = N / 2;
  const std::size_t frames = (n + cfg.hop - 1) / cfg.hop;

  std::vector<double> window(N, 0.0);
  const std::size_t woff = (N - cfg.window) / 2;
  for (std::size_t k = 0; k < cfg.window; ++k)
    window[woff + k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / cfg.window);

  const auto fb = mel_filterbank(cfg.n_mels, N, static_cast<double>(x.sample_rate));

  auto sample_at = [&](std::ptrdiff_t p) {
    std::ptrdiff_t src = p - static_cast<std::ptrdiff_t>(pad);
    const auto len = static_cast<std::ptrdiff_t>(n);
    if (src < 0) src = -src;
    if (src >= len) src = 2 * (len - 1) - src;
    return x.samples[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(src, 0, len - 1))];
  };

  std::vector<double> in(N);
  std::vector<fftw_complex> spec(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(N), in.data(), spec.data(), FFTW_ESTIMATE);
  }

  MelSpectrogram out{frames, cfg.n_mels, std::vector<double>(frames * cfg.n_mels)};
  std::vector<double> mag(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop);
    for (std::size_t k = 0; k < N; ++k) in[k] = sample_at(start + static_cast<std::ptrdiff_t>(k)) * window[k];
    fftw_execute(plan);
    for (std::size_t b = 0; b < bins; ++b) mag[b] = std::hypot(spec[b][0], spec[b][1]);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b) e += fb[m][b] * mag[b];
      out.values[t * cfg.n_mels + m] = std::log(std::max(e, cfg.floor));
    }
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

/// Two transposed convolutions over (time, frequency), each followed by leaky
/// ReLU. Time stride 16 per layer (256 total), frequency stride 1 with padding
/// that preserves the band count.
struct UpsamplerShape {
  std::size_t layers = 2;
  std::size_t stride = 16;
  std::size_t kernel_t = 32;
  std::size_t kernel_f = 3;
  double leaky_slope = 0.4;

  TransposedConvGeometry geometry() const {
    return TransposedConvGeometry{stride, 1, (kernel_t - stride) / 2, (kernel_f - 1) / 2};
  }
  std::size_t factor() const {
    std::size_t f = 1;
    for (std::size_t l = 0; l < layers; ++l) f *= stride;
    return f;
  }
  void validate() const {
    if (layers == 0 || stride == 0) throw ValidationError("upsampler: layers and stride must be positive");
    if (kernel_t < stride || (kernel_t - stride) % 2 != 0)
      throw ValidationError("upsampler: time kernel must exceed the stride by an even amount");
    if (kernel_f % 2 == 0) throw ValidationError("upsampler: frequency kernel must be odd");
  }
};

template <class V>
struct UpsamplerWeights {
  struct Layer {
    V w;  // [1, 1, kernel_t, kernel_f]
    V b;  // [1]
  };
  std::vector<Layer> layers;
};

/// [1, frames, mels] -> [1, frames * factor, mels].
template <class B, class V = typename B::value>
V upsample_apply(B& be, const UpsamplerShape& s, const UpsamplerWeights<V>& w, const V& mel) {
  V x = mel;
  const auto g = s.geometry();
  for (const auto& L : w.layers)
    x = be.leaky_relu(be.conv_transpose2d(x, L.w, L.b, g), static_cast<typename B::scalar>(s.leaky_slope));
  return x;
}

template <class T>
struct Upsampler {
  UpsamplerShape shape;
  UpsamplerWeights<Tensor<T>> weights;
};

/// Per-sample features [1, frames * 256, mels].
template <class T>
Tensor<T> upsample(const MelSpectrogram& mel, const Upsampler<T>& up) {
  Eager<T> be;
  return upsample_apply(be, up.shape, up.weights, mel.as_tensor<T>());
}

/// Kernel that holds each input frame for `stride` output steps at the centre
/// frequency tap: composes to nearest-neighbour repetition of every frame.
template <class T>
Tensor<T> hold_kernel(const UpsamplerShape& s) {
  Tensor<T> k({1, 1, s.kernel_t, s.kernel_f});
  const std::size_t lo = (s.kernel_t - s.stride) / 2;
  for (std::size_t a = lo; a < lo + s.stride; ++a) k[a * s.kernel_f + s.kernel_f / 2] = T{1};
  return k;
}

/// Squeezes per-sample features [1, T, mels] into [mels, h, w] (tail beyond
/// h*w dropped) and applies each flow's cumulative row permutation: grid k is
/// the conditioner aligned with the input of flow k.
template <class T>
std::vector<Tensor<T>> build_conditioner_grids(const Tensor<T>& features, std::size_t h, std::size_t w,
                                               const std::vector<Permutation>& flow_permutations) {
  std::vector<Tensor<T>> grids;
  grids.reserve(flow_permutations.size());
  Tensor<T> g = elementwise::time_to_grid(features, h, w);
  for (std::size_t k = 0; k < flow_permutations.size(); ++k) {
    if (k > 0) g = elementwise::permute_rows(g, flow_permutations[k - 1].row_map);
    grids.push_back(g);
  }
  return grids;
}

}  // namespace waveflow
