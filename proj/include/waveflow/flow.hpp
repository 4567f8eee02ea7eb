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

// The per-flow bijection between a squeezed waveform X and latents Z,
//   Z(i,j) = exp(log_scale(i,j)) * X(i,j) + shift(i,j),
// with shift/log_scale computed from rows of X above i, and stacks of such
// flows interleaved with height permutations.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "waveflow/conditioner.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/network.hpp"
#include "waveflow/signal.hpp"

namespace waveflow {

/// exp(-7): lower bound on the scale used when dividing during synthesis.
inline constexpr double kSynthLogScaleFloor = -7.0;

/// Instrumentation for the sampling direction.
struct SynthStats {
  std::size_t row_steps = 0;  // sequential row generations across all flows
  std::size_t net_evals = 0;  // full-grid network evaluations
  std::size_t floored = 0;    // elements whose scale hit the floor
};

template <class T>
struct FlowInverseResult {
  WaveGrid<T> z;
  WaveGrid<T> log_scale;
  double logdet = 0.0;
};

/// Z = sigma * X + mu in a single parallel pass; logdet = sum(log sigma).
template <class T>
FlowInverseResult<T> flow_inverse(const WaveGrid<T>& X, const std::type_identity_t<Tensor<T>>* cond, const FlowNet<T>& net) {
  auto ss = net_forward(X, cond, net);
  FlowInverseResult<T> r{WaveGrid<T>(X.h, X.w), std::move(ss.log_scale), 0.0};
  for (std::size_t i = 0; i < X.h; ++i)
    for (std::size_t j = 0; j < X.w; ++j) {
      const T mu = ss.shift(i, j);
      const T ls = r.log_scale(i, j);
      if (!std::isfinite(mu) || !std::isfinite(ls))
        throw NumericalError("flow_inverse: non-finite shift/scale at row " + std::to_string(i) + ", column " +
                             std::to_string(j));
      r.z(i, j) = std::exp(ls) * X(i, j) + mu;
      r.logdet += static_cast<double>(ls);
    }
  return r;
}

/// X = (Z - mu) / sigma generated one row at a time; row i is computed from
/// a full network evaluation over the rows already generated.
template <class T>
WaveGrid<T> flow_forward(const WaveGrid<T>& Z, const std::type_identity_t<Tensor<T>>* cond, const FlowNet<T>& net,
                         SynthStats* stats = nullptr) {
  WaveGrid<T> X(Z.h, Z.w);
  const T floor = static_cast<T>(kSynthLogScaleFloor);
  for (std::size_t i = 0; i < Z.h; ++i) {
    auto ss = net_forward(X, cond, net);
    for (std::size_t j = 0; j < Z.w; ++j) {
      T ls = ss.log_scale(i, j);
      if (!std::isfinite(ls) || !std::isfinite(ss.shift(i, j)))
        throw NumericalError("flow_forward: non-finite shift/scale at row " + std::to_string(i) + ", column " +
                             std::to_string(j));
      if (ls < floor) {
        ls = floor;
        if (stats) ++stats->floored;
      }
      X(i, j) = (Z(i, j) - ss.shift(i, j)) / std::exp(ls);
    }
    if (stats) {
      ++stats->row_steps;
      ++stats->net_evals;
    }
  }
  return X;
}

/// Log-likelihood of a grid under the stack, in nats.
struct LikelihoodReport {
  double total_loglik = 0.0;
  double per_dim_loglik = 0.0;
  double logdet_sum = 0.0;
  double base_term = 0.0;
  std::size_t dims = 0;
};

inline double half_log_two_pi() { return 0.5 * std::log(2.0 * std::numbers::pi); }

/// Isotropic unit Gaussian log-density summed over the grid.
template <class T>
double gaussian_log_density(const WaveGrid<T>& Z) {
  double s = 0.0;
  for (T v : Z.values) s += -0.5 * static_cast<double>(v) * static_cast<double>(v) - half_log_two_pi();
  return s;
}

/// Ordered flows with the permutation applied after each one.
template <class T>
struct FlowStack {
  std::size_t h = 16;
  std::vector<FlowNet<T>> flows;
  std::vector<Permutation> permutations;
  std::optional<Upsampler<T>> upsampler;
  double base_std = 1.0;
  std::uint32_t sample_rate = 22050;

  std::size_t size() const noexcept { return flows.size(); }
  bool conditioned() const { return !flows.empty() && flows.front().shape.cond_channels > 0; }

  void validate() const {
    if (flows.empty()) throw ValidationError("flow stack is empty");
    if (permutations.size() != flows.size()) throw ValidationError("flow stack: one permutation per flow required");
    for (const auto& p : permutations)
      if (p.size() != h || !p.is_bijection())
        throw ValidationError("flow stack: permutation is not a bijection on " + std::to_string(h) + " rows");
    if (conditioned() && !upsampler) throw ValidationError("flow stack: conditioned flows need an upsampler");
  }
};

/// Conditioner grids for every flow of `fs` from a mel spectrogram, or an
/// empty list for an unconditional stack.
template <class T>
std::vector<Tensor<T>> stack_conditioners(const FlowStack<T>& fs, const MelSpectrogram* mel, std::size_t w) {
  if (!fs.conditioned()) return {};
  if (!mel) throw ValidationError("this model is conditioned on a mel spectrogram, but none was given");
  if (mel->n_mels != fs.flows.front().shape.cond_channels)
    throw ValidationError("mel spectrogram has " + std::to_string(mel->n_mels) + " bands, model expects " +
                          std::to_string(fs.flows.front().shape.cond_channels));
  const std::size_t covered = mel->n_frames * fs.upsampler->shape.factor();
  if (covered < fs.h * w)
    throw ValidationError("mel frames cover " + std::to_string(covered) + " samples but the waveform needs " +
                          std::to_string(fs.h * w));
  return build_conditioner_grids(upsample(*mel, *fs.upsampler), fs.h, w, fs.permutations);
}

template <class T>
struct StackInverseResult {
  WaveGrid<T> z0;
  LikelihoodReport report;
  std::size_t pad_count = 0;
};

/// Grid-level likelihood pass. `cond` holds one grid per flow, or is empty.
template <class T>
StackInverseResult<T> stack_inverse_grid(const WaveGrid<T>& X, const std::vector<Tensor<T>>& cond,
                                         const FlowStack<T>& fs) {
  fs.validate();
  if (X.h != fs.h) throw ValidationError("grid height does not match the flow stack");
  StackInverseResult<T> r;
  WaveGrid<T> cur = X;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    auto fi = flow_inverse(cur, cond.empty() ? nullptr : &cond[k], fs.flows[k]);
    r.report.logdet_sum += fi.logdet;
    cur = permute_rows(fi.z, fs.permutations[k]);
  }
  r.report.base_term = gaussian_log_density(cur);
  r.report.total_loglik = r.report.logdet_sum + r.report.base_term;
  r.report.dims = cur.size();
  r.report.per_dim_loglik = r.report.total_loglik / static_cast<double>(r.report.dims);
  r.z0 = std::move(cur);
  return r;
}

/// Inverse permutations and flows in reverse order; n_flows * h row steps.
template <class T>
WaveGrid<T> stack_forward_grid(const WaveGrid<T>& Z0, const std::vector<Tensor<T>>& cond, const FlowStack<T>& fs,
                               SynthStats* stats = nullptr) {
  fs.validate();
  if (Z0.h != fs.h) throw ValidationError("latent height does not match the flow stack");
  WaveGrid<T> cur = Z0;
  for (std::size_t k = fs.size(); k-- > 0;) {
    cur = permute_rows(cur, fs.permutations[k].inverse());
    cur = flow_forward(cur, cond.empty() ? nullptr : &cond[k], fs.flows[k], stats);
  }
  return cur;
}

/// Pads, squeezes, and evaluates the exact log-likelihood of a waveform.
template <class T>
StackInverseResult<T> stack_inverse(const Waveform& x, const MelSpectrogram* mel, const FlowStack<T>& fs) {
  auto padded = pad_to_multiple(x, fs.h);
  auto X = squeeze<T>(padded.waveform, fs.h);
  auto cond = stack_conditioners(fs, mel, X.w);
  auto r = stack_inverse_grid(X, cond, fs);
  r.pad_count = padded.pad_count;
  return r;
}

/// Generates a waveform from latents; `trim` tail samples are dropped.
template <class T>
Waveform stack_forward(const WaveGrid<T>& Z0, const MelSpectrogram* mel, const FlowStack<T>& fs,
                       SynthStats* stats = nullptr, std::size_t trim = 0) {
  auto cond = stack_conditioners(fs, mel, Z0.w);
  auto x = unsqueeze(stack_forward_grid(Z0, cond, fs, stats), fs.sample_rate);
  if (trim > x.samples.size()) throw ValidationError("stack_forward: trim exceeds the waveform length");
  x.samples.resize(x.samples.size() - trim);
  return x;
}

}  // namespace waveflow
