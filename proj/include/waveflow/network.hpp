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

// The dilated 2-D convolution stack that produces the per-element shift and
// log-scale grids of one flow.
//
// Layout of a flow network:
//   input   X (1 channel), shifted down one row so row i only sees rows < i
//   start   1x1 conv, 1 -> C
//   layer l conv (kernel_h x kernel_w, dilation (dh_l, dw_l)), C -> 2C
//           + 1x1 conditioner projection, mels -> 2C
//           gate = tanh(first C) * sigmoid(last C)
//           1x1 res/skip projection, C -> 2C: residual += first C, skip += last C
//   end     1x1 conv on the skip sum, C -> 2 (shift, log-scale)

#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <type_traits>
#include <vector>

#include "waveflow/autodiff.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/signal.hpp"
#include "waveflow/tensor.hpp"

namespace waveflow {

inline constexpr std::size_t kDefaultLayers = 8;

/// r = (k - 1) * sum(d) + 1 rows.
inline std::size_t receptive_field(std::size_t k, const std::vector<std::size_t>& dilations) {
  if (dilations.empty()) throw ValidationError("receptive_field: empty dilation list");
  if (k < 1) throw ValidationError("receptive_field: filter size must be >= 1");
  std::size_t sum = 0;
  for (std::size_t d : dilations) {
    if (d < 1) throw ValidationError("receptive_field: dilations must be >= 1");
    sum += d;
  }
  return (k - 1) * sum + 1;
}

/// Cycle [1, 2, ..., 2^s] repeated to fill `layers`.
inline std::vector<std::size_t> dilation_cycle(std::size_t s, std::size_t layers) {
  std::vector<std::size_t> d(layers);
  for (std::size_t l = 0; l < layers; ++l) d[l] = std::size_t{1} << (l % (s + 1));
  return d;
}

/// Height dilations for a squeeze height h. The smallest doubling cycle whose
/// receptive field (k = 3) covers h; from h >= 512 the full [1, ..., 128] cycle.
/// For 8 layers this yields the tabulated choices for h in {8, 16, 32, 64}.
inline std::vector<std::size_t> default_dilations(std::size_t h, std::size_t layers = kDefaultLayers) {
  if (h < 1) throw ValidationError("default_dilations: h must be >= 1");
  if (layers < 1) throw ValidationError("default_dilations: need at least one layer");
  if (h >= 512) return dilation_cycle(7, layers);
  for (std::size_t s = 0; s <= 7; ++s) {
    auto d = dilation_cycle(s, layers);
    if (receptive_field(3, d) >= h) return d;
  }
  return dilation_cycle(7, layers);
}

/// Width dilations: the fixed [1, 2, 4, ..., 128] cycle.
inline std::vector<std::size_t> default_width_dilations(std::size_t layers = kDefaultLayers) {
  return dilation_cycle(7, layers);
}

struct DilationCheck {
  bool ok = true;
  std::size_t sum = 0;
  double required = 0.0;  // (h - 1) / (k - 1)
  std::string message;
};

/// ok iff sum(d) >= (h - 1) / (k - 1); otherwise a warning naming the deficit.
inline DilationCheck validate_dilations(std::size_t h, std::size_t k, const std::vector<std::size_t>& dilations) {
  if (k < 2) throw ValidationError("validate_dilations: filter size must be >= 2");
  DilationCheck c;
  c.sum = std::accumulate(dilations.begin(), dilations.end(), std::size_t{0});
  c.required = static_cast<double>(h - 1) / static_cast<double>(k - 1);
  c.ok = static_cast<double>(c.sum) >= c.required;
  if (!c.ok) {
    c.message = "height receptive field " + std::to_string(receptive_field(k, dilations)) + " < h=" +
                std::to_string(h) + ": dilation sum " + std::to_string(c.sum) + " is short of the required " +
                std::to_string(c.required) + " by " + std::to_string(c.required - static_cast<double>(c.sum));
  }
  return c;
}

/// Architecture of one flow network.
struct NetShape {
  std::size_t residual_channels = 64;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::vector<std::size_t> dilations_h = default_dilations(16);
  std::vector<std::size_t> dilations_w = default_width_dilations();
  std::size_t cond_channels = 0;  // mel bands; 0 for an unconditional flow

  std::size_t layers() const noexcept { return dilations_h.size(); }

  ConvGeometry layer_geometry(std::size_t l) const {
    return ConvGeometry{kernel_h, kernel_w, dilations_h.at(l), dilations_w.at(l)};
  }

  void validate() const {
    if (residual_channels == 0) throw ValidationError("network: residual_channels must be positive");
    if (dilations_h.empty()) throw ValidationError("network: at least one layer is required");
    if (dilations_h.size() != dilations_w.size())
      throw ValidationError("network: height and width dilation lists differ in length");
    for (auto d : dilations_h)
      if (d < 1) throw ValidationError("network: height dilations must be >= 1");
    for (auto d : dilations_w)
      if (d < 1) throw ValidationError("network: width dilations must be >= 1");
    if ((kernel_h != 1 && kernel_h != 3) || (kernel_w != 1 && kernel_w != 3))
      throw ValidationError("network: kernel sizes must be 1 or 3 per axis");
  }
};

/// Materialized weights of one flow network in backend value type V.
template <class V>
struct NetWeights {
  struct Layer {
    V conv_w, conv_b;  // [2C, C, kh, kw], [2C]
    V cond_w, cond_b;  // [2C, mels, 1, 1], [2C]; unused when unconditional
    V rs_w, rs_b;      // [2C, C, 1, 1], [2C]
  };
  V start_w, start_b;  // [C, 1, 1, 1], [C]
  std::vector<Layer> layers;
  V end_w, end_b;  // [2, C, 1, 1], [2]
};

template <class V>
struct NetOutput {
  V shift;      // [1, h, w]
  V log_scale;  // [1, h, w]
};

/// Evaluates one flow network on backend `be`. `x` is the unshifted [1, h, w]
/// grid; the one-row shift happens here. `cond` is the [mels, h, w] conditioner
/// grid or null. When `hidden` is given it receives each layer's input.
template <class B, class V = typename B::value>
NetOutput<V> net_apply(B& be, const NetShape& s, const NetWeights<V>& w, const V& x, const V* cond,
                       std::vector<V>* hidden = nullptr) {
  const std::size_t C = s.residual_channels;
  V h = be.conv2d(be.shift_down(x), w.start_w, w.start_b, kPointwise);
  V skip;
  for (std::size_t l = 0; l < s.layers(); ++l) {
    const auto& L = w.layers[l];
    if (hidden) hidden->push_back(h);
    V a = be.conv2d(h, L.conv_w, L.conv_b, s.layer_geometry(l));
    if (cond) a = be.add(a, be.conv2d(*cond, L.cond_w, L.cond_b, kPointwise));
    V gate = be.mul(be.tanh(be.slice_channels(a, 0, C)), be.sigmoid(be.slice_channels(a, C, C)));
    V rs = be.conv2d(gate, L.rs_w, L.rs_b, kPointwise);
    h = be.add(h, be.slice_channels(rs, 0, C));
    skip = l == 0 ? be.slice_channels(rs, C, C) : be.add(skip, be.slice_channels(rs, C, C));
  }
  V out = be.conv2d(skip, w.end_w, w.end_b, kPointwise);
  return {be.slice_channels(out, 0, 1), be.slice_channels(out, 1, 1)};
}

/// One flow's network with concrete weights (inference form).
template <class T>
struct FlowNet {
  NetShape shape;
  NetWeights<Tensor<T>> weights;
};

template <class T>
struct ShiftScale {
  WaveGrid<T> shift;
  WaveGrid<T> log_scale;
};

template <class T>
void check_cond(const FlowNet<T>& net, std::size_t h, std::size_t w, const std::type_identity_t<Tensor<T>>* cond) {
  if (net.shape.cond_channels == 0) return;
  if (!cond) throw ValidationError("network expects a conditioner grid");
  if (cond->rank() != 3 || cond->dim(0) != net.shape.cond_channels || cond->dim(1) != h || cond->dim(2) != w)
    throw ValidationError("conditioner grid " + shape_string(cond->shape()) + " does not match grid " +
                          std::to_string(h) + "x" + std::to_string(w) + " with " +
                          std::to_string(net.shape.cond_channels) + " channels");
}

/// Shift and log-scale for every element of X; entry (i, j) depends only on
/// rows of X above i (and on the conditioner).
template <class T>
ShiftScale<T> net_forward(const WaveGrid<T>& X, const std::type_identity_t<Tensor<T>>* cond, const FlowNet<T>& net) {
  check_cond(net, X.h, X.w, cond);
  Eager<T> be;
  const Tensor<T>* c = net.shape.cond_channels ? cond : nullptr;
  auto out = net_apply(be, net.shape, net.weights, X.as_tensor(), c);
  return {WaveGrid<T>::from_tensor(out.shift), WaveGrid<T>::from_tensor(out.log_scale)};
}

/// Layer inputs of a full evaluation, each [C, h, w].
template <class T>
std::vector<Tensor<T>> net_hidden_states(const WaveGrid<T>& X, const std::type_identity_t<Tensor<T>>* cond, const FlowNet<T>& net) {
  check_cond(net, X.h, X.w, cond);
  Eager<T> be;
  std::vector<Tensor<T>> hidden;
  net_apply(be, net.shape, net.weights, X.as_tensor(), net.shape.cond_channels ? cond : nullptr, &hidden);
  return hidden;
}

}  // namespace waveflow
