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

// Row-by-row synthesis with convolution queues.
//
// Generating row i of a flow needs, for each layer, that layer's input at rows
// i, i - d, ..., i - (k_h - 1) * d. The earlier rows are kept in a per-layer
// ring buffer of (k_h - 1) * d rows, so every row costs one pass over a single
// row of each layer regardless of h. The buffers start out as zero rows, which
// is exactly the top padding of the causal convolution.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "waveflow/errors.hpp"
#include "waveflow/flow.hpp"
#include "waveflow/kernels.hpp"
#include "waveflow/network.hpp"
#include "waveflow/signal.hpp"

namespace waveflow {

/// i.i.d. N(0, std^2) latents. std = 0 gives an all-zero grid.
template <class T>
WaveGrid<T> sample_latent(std::size_t h, std::size_t w, double stddev, std::mt19937_64& rng) {
  if (!(stddev >= 0.0) || !std::isfinite(stddev)) throw ValidationError("sample_latent: std must be >= 0");
  WaveGrid<T> z(h, w);
  if (stddev == 0.0) return z;
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : z.values) v = static_cast<T>(n(rng));
  return z;
}

/// Ring buffer of the most recent `capacity` rows of one layer's input.
template <class T>
class LayerQueue {
 public:
  LayerQueue(std::size_t capacity, std::size_t row_size)
      : capacity_(capacity), row_size_(row_size), data_(capacity * row_size, T{0}), zeros_(row_size, T{0}) {}

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t pushed() const noexcept { return pushed_; }

  /// Row r of the layer input; negative r is top padding.
  const T* row(std::ptrdiff_t r) const {
    if (r < 0) return zeros_.data();
    const auto ur = static_cast<std::size_t>(r);
    if (ur >= pushed_ || ur + capacity_ < pushed_)
      throw std::logic_error("convolution queue underflow: row " + std::to_string(r) + " is not cached");
    return data_.data() + (ur % capacity_) * row_size_;
  }
  bool holds(std::size_t r) const { return r < pushed_ && r + capacity_ >= pushed_; }

  void push(const T* src) {
    if (capacity_ > 0) std::copy(src, src + row_size_, data_.begin() + (pushed_ % capacity_) * row_size_);
    ++pushed_;
  }

 private:
  std::size_t capacity_;
  std::size_t row_size_;
  std::vector<T> data_;
  std::vector<T> zeros_;
  std::size_t pushed_ = 0;
};

template <class T>
struct QueueState {
  std::vector<LayerQueue<T>> layers;
};

/// Incremental evaluation of one flow's network. Each call to step() feeds the
/// next input row and returns shift and log-scale for that row.
template <class T>
class QueuedFlowSession {
 public:
  QueuedFlowSession(const FlowNet<T>& net, const std::type_identity_t<Tensor<T>>* cond, std::size_t h, std::size_t w)
      : net_(net), h_(h), w_(w) {
    check_cond(net, h, w, cond);
    const auto& s = net.shape;
    const std::size_t C = s.residual_channels;
    for (std::size_t l = 0; l < s.layers(); ++l) {
      state_.layers.emplace_back((s.kernel_h - 1) * s.dilations_h[l], C * w);
      // Conditioner projection plus conv bias, computed once for all rows.
      Tensor<T> bias({2 * C, h, w});
      const auto& L = net.weights.layers[l];
      if (s.cond_channels) bias = kernels::conv2d(*cond, L.cond_w, L.cond_b, kPointwise);
      for (std::size_t o = 0; o < 2 * C; ++o)
        for (std::size_t k = 0; k < h * w; ++k) bias[o * h * w + k] += L.conv_b[o];
      layer_bias_.push_back(std::move(bias));
    }
    in_row_.assign(w, T{0});
    hid_.assign(C * w, T{0});
    pre_.assign(2 * C * w, T{0});
    gate_.assign(C * w, T{0});
    rs_.assign(2 * C * w, T{0});
    skip_.assign(C * w, T{0});
    out_.assign(2 * w, T{0});
    bias_row_.assign(2 * C * w, T{0});
    start_bias_.assign(C * w, T{0});
    for (std::size_t c = 0; c < C; ++c) std::fill_n(start_bias_.begin() + c * w, w, net.weights.start_b[c]);
    rs_bias_.resize(s.layers());
    for (std::size_t l = 0; l < s.layers(); ++l) {
      rs_bias_[l].assign(2 * C * w, T{0});
      for (std::size_t o = 0; o < 2 * C; ++o) std::fill_n(rs_bias_[l].begin() + o * w, w, net.weights.layers[l].rs_b[o]);
    }
    end_bias_.assign(2 * w, T{0});
    for (std::size_t o = 0; o < 2; ++o) std::fill_n(end_bias_.begin() + o * w, w, net.weights.end_b[o]);
  }

  std::size_t rows_done() const noexcept { return row_; }
  const QueueState<T>& queues() const noexcept { return state_; }
  /// Multiply-accumulates spent on the most recent row.
  std::size_t last_row_macs() const noexcept { return last_macs_; }

  /// `prev` is the previous generated row of X (null for row 0); the network
  /// sees it as the current row of its shifted input.
  void step(const T* prev, T* shift_out, T* log_scale_out) {
    if (row_ >= h_) throw std::logic_error("QueuedFlowSession: all rows already generated");
    const auto& s = net_.shape;
    const auto& W = net_.weights;
    const std::size_t C = s.residual_channels, w = w_;
    std::size_t macs = 0;
    if (prev)
      std::copy(prev, prev + w, in_row_.begin());
    else
      std::fill(in_row_.begin(), in_row_.end(), T{0});

    const T* tap0[1] = {in_row_.data()};
    kernels::conv2d_row(tap0, 1, C, w, W.start_w, kPointwise, start_bias_.data(), hid_.data());
    macs += C * w;
    std::fill(skip_.begin(), skip_.end(), T{0});

    std::vector<const T*> taps(s.kernel_h);
    for (std::size_t l = 0; l < s.layers(); ++l) {
      const auto g = s.layer_geometry(l);
      auto& q = state_.layers[l];
      for (std::size_t a = 0; a < s.kernel_h; ++a) {
        const std::ptrdiff_t off = g.row_offset(a);
        taps[a] = off == 0 ? hid_.data() : q.row(static_cast<std::ptrdiff_t>(row_) + off);
      }
      const Tensor<T>& lb = layer_bias_[l];
      for (std::size_t o = 0; o < 2 * C; ++o)
        std::copy_n(lb.data() + (o * h_ + row_) * w, w, bias_row_.begin() + o * w);
      kernels::conv2d_row(taps.data(), C, 2 * C, w, W.layers[l].conv_w, g, bias_row_.data(), pre_.data());
      macs += 2 * C * C * s.kernel_h * s.kernel_w * w;
      for (std::size_t k = 0; k < C * w; ++k)
        gate_[k] = std::tanh(pre_[k]) * elementwise::sigmoid(pre_[C * w + k]);
      const T* gtap[1] = {gate_.data()};
      kernels::conv2d_row(gtap, C, 2 * C, w, W.layers[l].rs_w, kPointwise, rs_bias_[l].data(), rs_.data());
      macs += 2 * C * C * w;
      q.push(hid_.data());
      for (std::size_t k = 0; k < C * w; ++k) {
        hid_[k] += rs_[k];
        skip_[k] += rs_[C * w + k];
      }
    }
    const T* stap[1] = {skip_.data()};
    kernels::conv2d_row(stap, C, 2, w, W.end_w, kPointwise, end_bias_.data(), out_.data());
    macs += 2 * C * w;
    std::copy_n(out_.begin(), w, shift_out);
    std::copy_n(out_.begin() + w, w, log_scale_out);
    last_macs_ = macs;
    ++row_;
  }

 private:
  const FlowNet<T>& net_;
  std::size_t h_, w_;
  std::size_t row_ = 0;
  std::size_t last_macs_ = 0;
  QueueState<T> state_;
  std::vector<Tensor<T>> layer_bias_;
  std::vector<std::vector<T>> rs_bias_;
  std::vector<T> in_row_, hid_, pre_, gate_, rs_, skip_, out_, bias_row_, start_bias_, end_bias_;
};

/// X = (Z - mu) / sigma one row at a time using the queued network.
template <class T>
WaveGrid<T> flow_forward_queued(const WaveGrid<T>& Z, const std::type_identity_t<Tensor<T>>* cond, const FlowNet<T>& net,
                                SynthStats* stats = nullptr) {
  QueuedFlowSession<T> sess(net, net.shape.cond_channels ? cond : nullptr, Z.h, Z.w);
  WaveGrid<T> X(Z.h, Z.w);
  std::vector<T> mu(Z.w), ls(Z.w);
  const T floor = static_cast<T>(kSynthLogScaleFloor);
  for (std::size_t i = 0; i < Z.h; ++i) {
    sess.step(i == 0 ? nullptr : X.row(i - 1).data(), mu.data(), ls.data());
    for (std::size_t j = 0; j < Z.w; ++j) {
      T l = ls[j];
      if (!std::isfinite(l) || !std::isfinite(mu[j]))
        throw NumericalError("synth_queued: non-finite shift/scale at row " + std::to_string(i) + ", column " +
                             std::to_string(j));
      if (l < floor) {
        l = floor;
        if (stats) ++stats->floored;
      }
      X(i, j) = (Z(i, j) - mu[j]) / std::exp(l);
    }
    if (stats) ++stats->row_steps;
  }
  return X;
}

template <class T>
WaveGrid<T> synth_queued_grid(const WaveGrid<T>& Z0, const std::vector<Tensor<T>>& cond, const FlowStack<T>& fs,
                              SynthStats* stats = nullptr) {
  fs.validate();
  if (Z0.h != fs.h) throw ValidationError("latent height does not match the flow stack");
  WaveGrid<T> cur = Z0;
  for (std::size_t k = fs.size(); k-- > 0;) {
    cur = permute_rows(cur, fs.permutations[k].inverse());
    cur = flow_forward_queued(cur, cond.empty() ? nullptr : &cond[k], fs.flows[k], stats);
  }
  return cur;
}

/// Reference path: a full network evaluation per generated row.
template <class T>
Waveform synth_naive(const WaveGrid<T>& Z0, const MelSpectrogram* mel, const FlowStack<T>& fs,
                     SynthStats* stats = nullptr, std::size_t trim = 0) {
  return stack_forward(Z0, mel, fs, stats, trim);
}

template <class T>
Waveform synth_queued(const WaveGrid<T>& Z0, const MelSpectrogram* mel, const FlowStack<T>& fs,
                      SynthStats* stats = nullptr, std::size_t trim = 0) {
  auto cond = stack_conditioners(fs, mel, Z0.w);
  auto x = unsqueeze(synth_queued_grid(Z0, cond, fs, stats), fs.sample_rate);
  if (trim > x.samples.size()) throw ValidationError("synth_queued: trim exceeds the waveform length");
  x.samples.resize(x.samples.size() - trim);
  return x;
}

struct BenchReport {
  double naive_seconds = 0.0;
  double queued_seconds = 0.0;
  std::size_t sequential_steps = 0;
  std::size_t samples = 0;
  std::uint32_t sample_rate = 22050;
  double naive_realtime_factor = 0.0;   // audio seconds / wall seconds
  double queued_realtime_factor = 0.0;
  double queued_samples_per_second = 0.0;
  double speedup = 0.0;                 // naive / queued wall time
  double max_abs_diff = 0.0;
};

struct BenchOptions {
  std::size_t width = 64;
  double stddev = 1.0;
  std::uint64_t seed = 0;
  std::size_t repeats = 1;
  bool run_naive = true;
};

/// Times both synthesis paths on the same latents. Conditioner grids are built
/// before the clock starts; queue setup is inside the timed region.
template <class T>
BenchReport bench(const FlowStack<T>& fs, const MelSpectrogram* mel, const BenchOptions& opt) {
  using clock = std::chrono::steady_clock;
  if (opt.repeats == 0) throw ValidationError("bench: repeats must be positive");
  std::mt19937_64 rng(opt.seed);
  const auto z = sample_latent<T>(fs.h, opt.width, opt.stddev, rng);
  const auto cond = stack_conditioners(fs, mel, opt.width);

  BenchReport r;
  r.samples = fs.h * opt.width;
  r.sample_rate = fs.sample_rate;
  WaveGrid<T> xq, xn;
  double best_q = 1e300, best_n = 1e300;
  for (std::size_t rep = 0; rep < opt.repeats; ++rep) {
    SynthStats st;
    auto t0 = clock::now();
    xq = synth_queued_grid(z, cond, fs, &st);
    best_q = std::min(best_q, std::chrono::duration<double>(clock::now() - t0).count());
    r.sequential_steps = st.row_steps;
    if (opt.run_naive) {
      t0 = clock::now();
      xn = stack_forward_grid(z, cond, fs);
      best_n = std::min(best_n, std::chrono::duration<double>(clock::now() - t0).count());
    }
  }
  const double audio = static_cast<double>(r.samples) / r.sample_rate;
  r.queued_seconds = best_q;
  r.queued_realtime_factor = audio / best_q;
  r.queued_samples_per_second = static_cast<double>(r.samples) / best_q;
  if (opt.run_naive) {
    r.naive_seconds = best_n;
    r.naive_realtime_factor = audio / best_n;
    r.speedup = best_n / best_q;
    for (std::size_t k = 0; k < xq.size(); ++k)
      r.max_abs_diff = std::max(r.max_abs_diff, std::abs(static_cast<double>(xq.values[k]) - xn.values[k]));
  }
  return r;
}

}  // namespace waveflow
