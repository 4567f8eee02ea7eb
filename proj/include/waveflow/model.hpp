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

// Model configuration, the named parameter store, initialization, and the
// binding of stored parameters onto an evaluation backend.
//
// Parameter names:
//   flow{f}.start.{v,g,b}
//   flow{f}.layer{l}.{conv,cond,res_skip}.{v,g,b}
//   flow{f}.end.{w,b}                 (plain, zero-initialized)
//   upsampler.layer{k}.{v,g,b}

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "waveflow/conditioner.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/flow.hpp"
#include "waveflow/network.hpp"
#include "waveflow/signal.hpp"
#include "waveflow/tensor.hpp"

namespace waveflow {

inline constexpr double kInitStd = 0.05;

struct ModelConfig {
  std::string name = "custom";
  std::size_t h = 16;
  std::size_t n_flows = 8;
  std::size_t n_layers = kDefaultLayers;
  std::size_t residual_channels = 64;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::vector<std::size_t> dilations_h;  // empty: default_dilations(h)
  std::vector<std::size_t> dilations_w;  // empty: [1, 2, ..., 128] cycle
  std::string permutation = "auto";      // auto | a | b | none
  bool conditioned = true;
  MelConfig mel;
  UpsamplerShape upsampler;
  std::uint32_t sample_rate = 22050;

  std::vector<std::size_t> resolved_dilations_h() const {
    return dilations_h.empty() ? default_dilations(h, n_layers) : dilations_h;
  }
  std::vector<std::size_t> resolved_dilations_w() const {
    return dilations_w.empty() ? default_width_dilations(n_layers) : dilations_w;
  }

  NetShape net_shape() const {
    NetShape s;
    s.residual_channels = residual_channels;
    s.kernel_h = kernel_h;
    s.kernel_w = kernel_w;
    s.dilations_h = resolved_dilations_h();
    s.dilations_w = resolved_dilations_w();
    s.cond_channels = conditioned ? mel.n_mels : 0;
    return s;
  }

  /// Throws on hard errors; returns warnings (a dilation deficit is a warning).
  std::vector<std::string> validate() const {
    if (h < 1) throw ValidationError("config: h must be >= 1");
    if (n_flows < 1) throw ValidationError("config: n_flows must be >= 1");
    if (n_layers < 1) throw ValidationError("config: n_layers must be >= 1");
    if (!dilations_h.empty() && dilations_h.size() != n_layers)
      throw ValidationError("config: dilations_h has " + std::to_string(dilations_h.size()) + " entries, expected " +
                            std::to_string(n_layers));
    if (!dilations_w.empty() && dilations_w.size() != n_layers)
      throw ValidationError("config: dilations_w has " + std::to_string(dilations_w.size()) + " entries, expected " +
                            std::to_string(n_layers));
    if (permutation != "auto" && permutation != "a" && permutation != "b" && permutation != "none")
      throw ValidationError("config: permutation must be one of auto, a, b, none");
    if (conditioned) {
      if (mel.n_mels == 0 || mel.hop == 0) throw ValidationError("config: mel settings must be positive");
      upsampler.validate();
      if (upsampler.factor() != mel.hop)
        throw ValidationError("config: upsampling factor " + std::to_string(upsampler.factor()) +
                              " does not equal the mel hop " + std::to_string(mel.hop));
    }
    if (sample_rate == 0) throw ValidationError("config: sample_rate must be positive");
    net_shape().validate();
    std::vector<std::string> warnings;
    if (kernel_h >= 2) {
      auto chk = validate_dilations(h, kernel_h, resolved_dilations_h());
      if (!chk.ok) warnings.push_back(chk.message);
    }
    return warnings;
  }
};

/// Row permutations applied after each flow.
///   a: reverse after every flow
///   b: reverse for the first half of the flows, bipartite reverse for the rest
///   auto: b for 8 flows, identity for a single flow, a otherwise
inline std::vector<Permutation> flow_permutations(std::size_t n_flows, std::size_t h, const std::string& strategy) {
  std::string s = strategy;
  if (s == "auto") s = n_flows == 8 ? "b" : n_flows == 1 ? "none" : "a";
  std::vector<Permutation> out;
  for (std::size_t k = 0; k < n_flows; ++k) {
    if (s == "none")
      out.push_back(Permutation::identity(h));
    else if (s == "a" || k < n_flows / 2)
      out.push_back(Permutation::reverse(h));
    else
      out.push_back(Permutation::bipartite_reverse(h));
  }
  return out;
}

/// Named tensors in insertion order.
template <class T>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw ValidationError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(t));
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter " + name);
    return entries_[it->second].second;
  }
  const Tensor<T>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// One flow's weights plus the optional shared upsampler, in backend values.
template <class V>
struct ModelWeights {
  std::vector<NetWeights<V>> flows;
  std::optional<UpsamplerWeights<V>> upsampler;
};

inline std::string flow_prefix(std::size_t f) { return "flow" + std::to_string(f); }
inline std::string layer_prefix(std::size_t f, std::size_t l) {
  return flow_prefix(f) + ".layer" + std::to_string(l);
}

/// Expected parameter shapes for a configuration, in canonical order.
inline std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  const auto s = cfg.net_shape();
  const std::size_t C = s.residual_channels;
  std::vector<std::pair<std::string, Shape>> out;
  auto wn = [&out](const std::string& p, Shape v) {
    const std::size_t o = v[0];
    out.emplace_back(p + ".v", std::move(v));
    out.emplace_back(p + ".g", Shape{o});
    out.emplace_back(p + ".b", Shape{o});
  };
  for (std::size_t f = 0; f < cfg.n_flows; ++f) {
    wn(flow_prefix(f) + ".start", {C, 1, 1, 1});
    for (std::size_t l = 0; l < s.layers(); ++l) {
      const auto lp = layer_prefix(f, l);
      wn(lp + ".conv", {2 * C, C, s.kernel_h, s.kernel_w});
      if (s.cond_channels) wn(lp + ".cond", {2 * C, s.cond_channels, 1, 1});
      wn(lp + ".res_skip", {2 * C, C, 1, 1});
    }
    out.emplace_back(flow_prefix(f) + ".end.w", Shape{2, C, 1, 1});
    out.emplace_back(flow_prefix(f) + ".end.b", Shape{2});
  }
  if (cfg.conditioned)
    for (std::size_t k = 0; k < cfg.upsampler.layers; ++k) {
      const std::string p = "upsampler.layer" + std::to_string(k);
      out.emplace_back(p + ".v", Shape{1, 1, cfg.upsampler.kernel_t, cfg.upsampler.kernel_f});
      out.emplace_back(p + ".g", Shape{1});
      out.emplace_back(p + ".b", Shape{1});
    }
  return out;
}

/// Trainable scalars of a configuration (weight norm counted as v plus g).
inline std::size_t count_parameters(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) n += shape_numel(shape);
  return n;
}

/// Per-output-channel L2 norm of the leading axis.
template <class T>
Tensor<T> channel_norms(const Tensor<T>& w) {
  const std::size_t outs = w.dim(0), per = w.size() / outs;
  Tensor<T> g({outs});
  for (std::size_t o = 0; o < outs; ++o) {
    T s{0};
    for (std::size_t k = 0; k < per; ++k) s += w[o * per + k] * w[o * per + k];
    g[o] = std::sqrt(s);
  }
  return g;
}

template <class T>
struct WaveFlowModel {
  ModelConfig config;
  ParamStore<T> params;

  std::size_t parameter_count() const { return params.scalar_count(); }

  /// Conv directions ~ N(0, 0.05^2) with g = ||v|| per output channel, zero
  /// biases, zero output projection (every flow starts as the identity), and
  /// the frame-holding upsampler kernel.
  static WaveFlowModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    WaveFlowModel m;
    m.config = cfg;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, kInitStd);
    Tensor<T> pending_v;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      const bool ups = name.rfind("upsampler.", 0) == 0;
      const char kind = name.back();
      const bool is_end = name.find(".end.") != std::string::npos;
      Tensor<T> t(shape);
      if (is_end) {
        // zero
      } else if (kind == 'v') {
        if (ups) {
          t = hold_kernel<T>(cfg.upsampler);
        } else {
          for (auto& x : t.storage()) x = static_cast<T>(normal(rng));
        }
        pending_v = t;
      } else if (kind == 'g') {
        t = channel_norms(pending_v);
      }
      m.params.add(name, std::move(t));
    }
    return m;
  }

  template <class U>
  WaveFlowModel<U> cast() const {
    WaveFlowModel<U> out;
    out.config = config;
    for (const auto& [name, t] : params) out.params.add(name, t.template cast<U>());
    return out;
  }

  std::vector<Permutation> permutations() const {
    return flow_permutations(config.n_flows, config.h, config.permutation);
  }

  /// Inference form with weight norm folded in.
  FlowStack<T> stack() const;
};

/// Registers every parameter on `be` and materializes weight-normed filters.
template <class B, class T>
ModelWeights<typename B::value> bind_weights(B& be, const WaveFlowModel<T>& m) {
  using V = typename B::value;
  const auto s = m.config.net_shape();
  std::map<std::string, V> leaf;
  for (const auto& [name, t] : m.params) leaf.emplace(name, be.parameter(name, t));
  auto wn = [&](const std::string& p) { return be.weight_norm(leaf.at(p + ".v"), leaf.at(p + ".g")); };

  ModelWeights<V> out;
  for (std::size_t f = 0; f < m.config.n_flows; ++f) {
    NetWeights<V> w;
    const auto fp = flow_prefix(f);
    w.start_w = wn(fp + ".start");
    w.start_b = leaf.at(fp + ".start.b");
    for (std::size_t l = 0; l < s.layers(); ++l) {
      const auto lp = layer_prefix(f, l);
      typename NetWeights<V>::Layer L;
      L.conv_w = wn(lp + ".conv");
      L.conv_b = leaf.at(lp + ".conv.b");
      if (s.cond_channels) {
        L.cond_w = wn(lp + ".cond");
        L.cond_b = leaf.at(lp + ".cond.b");
      }
      L.rs_w = wn(lp + ".res_skip");
      L.rs_b = leaf.at(lp + ".res_skip.b");
      w.layers.push_back(std::move(L));
    }
    w.end_w = leaf.at(fp + ".end.w");
    w.end_b = leaf.at(fp + ".end.b");
    out.flows.push_back(std::move(w));
  }
  if (m.config.conditioned) {
    UpsamplerWeights<V> u;
    for (std::size_t k = 0; k < m.config.upsampler.layers; ++k) {
      const std::string p = "upsampler.layer" + std::to_string(k);
      u.layers.push_back({wn(p), leaf.at(p + ".b")});
    }
    out.upsampler = std::move(u);
  }
  return out;
}

template <class T>
FlowStack<T> WaveFlowModel<T>::stack() const {
  Eager<T> be;
  auto w = bind_weights(be, *this);
  FlowStack<T> fs;
  fs.h = config.h;
  fs.sample_rate = config.sample_rate;
  fs.permutations = permutations();
  const auto shape = config.net_shape();
  for (auto& fw : w.flows) fs.flows.push_back(FlowNet<T>{shape, std::move(fw)});
  if (w.upsampler) fs.upsampler = Upsampler<T>{config.upsampler, std::move(*w.upsampler)};
  return fs;
}

/// Mean negative log-likelihood per dimension of one grid, on any backend:
///   (0.5 * sum(Z0^2) - sum(log sigma)) / (h * w) + 0.5 * log(2 pi).
/// `x` is [1, h, w]; `mel` is [1, frames, mels] or null when unconditioned.
template <class B, class V = typename B::value>
V model_nll(B& be, const ModelConfig& cfg, const ModelWeights<V>& w, const std::vector<Permutation>& perms,
            const V& x, const std::type_identity_t<V>* mel) {
  const auto shape = cfg.net_shape();
  const auto& xv = be.value_of(x);
  const std::size_t h = xv.dim(1), wd = xv.dim(2);
  std::optional<V> cond;
  if (shape.cond_channels) {
    if (!mel || !w.upsampler) throw ValidationError("model_nll: conditioned model needs mel features");
    cond = be.time_to_grid(upsample_apply(be, cfg.upsampler, *w.upsampler, *mel), h, wd);
  }
  V cur = x;
  std::optional<V> logdet;
  for (std::size_t k = 0; k < w.flows.size(); ++k) {
    if (k > 0 && cond) cond = be.permute_rows(*cond, perms[k - 1].row_map);
    auto out = net_apply(be, shape, w.flows[k], cur, cond ? &*cond : nullptr);
    V z = be.add(be.mul(be.exp(out.log_scale), cur), out.shift);
    V ld = be.sum(out.log_scale);
    logdet = logdet ? be.add(*logdet, ld) : ld;
    cur = be.permute_rows(z, perms[k].row_map);
  }
  using S = typename B::scalar;
  const S inv_n = S{1} / static_cast<S>(h * wd);
  V quad = be.scale(be.sum(be.mul(cur, cur)), S{0.5});
  return be.add_scalar(be.scale(be.sub(quad, *logdet), inv_n), static_cast<S>(half_log_two_pi()));
}

}  // namespace waveflow
