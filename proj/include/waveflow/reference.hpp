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

// Plain 1-D reference transforms used as oracles for the 2-D flow:
//   autoregressive flow   z_t = x_t * sigma_t(x_<t) + mu_t(x_<t)
//   bipartite flow        z_a = x_a, z_b = x_b * sigma_b(x_a) + mu_b(x_a)
// and a scalar-loop evaluator of a flow network restricted to one axis, so the
// special-case equivalences can be checked against independent code.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "waveflow/errors.hpp"
#include "waveflow/kernels.hpp"
#include "waveflow/network.hpp"

namespace waveflow::reference {

struct Affine {
  double mu = 0.0;
  double log_sigma = 0.0;
};

/// (mu_t, log sigma_t) from the prefix x[0..t).
using AfConditional = std::function<Affine(std::span<const double> prefix, std::size_t t)>;

struct AfResult {
  std::vector<double> z;
  double logdet = 0.0;
};

inline AfResult af_inverse(const std::vector<double>& x, const AfConditional& f) {
  AfResult r{std::vector<double>(x.size()), 0.0};
  for (std::size_t t = 0; t < x.size(); ++t) {
    const Affine p = f(std::span<const double>(x.data(), t), t);
    r.z[t] = x[t] * std::exp(p.log_sigma) + p.mu;
    r.logdet += p.log_sigma;
  }
  return r;
}

/// Sampling direction: strictly sequential over t.
inline std::vector<double> af_forward(const std::vector<double>& z, const AfConditional& f) {
  std::vector<double> x(z.size());
  for (std::size_t t = 0; t < z.size(); ++t) {
    const Affine p = f(std::span<const double>(x.data(), t), t);
    x[t] = (z[t] - p.mu) / std::exp(p.log_sigma);
  }
  return x;
}

/// Per-element (mu, log sigma) of the b half from the a half.
using BipartiteConditional = std::function<std::vector<Affine>(std::span<const double> xa)>;

struct BipartiteResult {
  std::vector<double> a;
  std::vector<double> b;
  double logdet = 0.0;
};

inline BipartiteResult bipartite_inverse(const std::vector<double>& xa, const std::vector<double>& xb,
                                         const BipartiteConditional& f) {
  const auto p = f(xa);
  if (p.size() != xb.size()) throw ValidationError("bipartite_inverse: conditional size mismatch");
  BipartiteResult r{xa, std::vector<double>(xb.size()), 0.0};
  for (std::size_t k = 0; k < xb.size(); ++k) {
    r.b[k] = xb[k] * std::exp(p[k].log_sigma) + p[k].mu;
    r.logdet += p[k].log_sigma;
  }
  return r;
}

inline BipartiteResult bipartite_forward(const std::vector<double>& za, const std::vector<double>& zb,
                                         const BipartiteConditional& f) {
  const auto p = f(za);
  if (p.size() != zb.size()) throw ValidationError("bipartite_forward: conditional size mismatch");
  BipartiteResult r{za, std::vector<double>(zb.size()), 0.0};
  for (std::size_t k = 0; k < zb.size(); ++k) {
    r.b[k] = (zb[k] - p[k].mu) / std::exp(p[k].log_sigma);
    r.logdet -= p[k].log_sigma;
  }
  return r;
}

/// Scalar-loop evaluation of a flow network over a single axis of a 1-D
/// sequence. Causal mode walks the height taps (kernel_w must be 1); centered
/// mode walks the width taps (kernel_h must be 1). Unconditioned only.
class Sequence1dNet {
 public:
  enum class Mode { Causal, Centered };

  Sequence1dNet(const NetShape& shape, const NetWeights<Tensor<double>>& w, Mode mode)
      : shape_(shape), w_(w), mode_(mode) {
    if (shape.cond_channels) throw ValidationError("Sequence1dNet: conditioned networks are not supported");
    if (mode == Mode::Causal && shape.kernel_w != 1)
      throw ValidationError("Sequence1dNet: causal mode requires width filter size 1");
    if (mode == Mode::Centered && shape.kernel_h != 1)
      throw ValidationError("Sequence1dNet: centered mode requires height filter size 1");
  }

  /// (mu, log sigma) at every position of the already-shifted input s.
  std::vector<Affine> eval(const std::vector<double>& s) const {
    const std::size_t n = s.size(), C = shape_.residual_channels;
    using Seq = std::vector<std::vector<double>>;  // [channel][position]
    Seq h(C, std::vector<double>(n));
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < n; ++t) h[c][t] = w_.start_w[c] * s[t] + w_.start_b[c];
    Seq skip(C, std::vector<double>(n, 0.0));
    for (std::size_t l = 0; l < shape_.layers(); ++l) {
      const auto& L = w_.layers[l];
      const std::size_t k = mode_ == Mode::Causal ? shape_.kernel_h : shape_.kernel_w;
      const std::size_t d = mode_ == Mode::Causal ? shape_.dilations_h[l] : shape_.dilations_w[l];
      Seq a(2 * C, std::vector<double>(n));
      for (std::size_t o = 0; o < 2 * C; ++o)
        for (std::size_t t = 0; t < n; ++t) {
          double acc = L.conv_b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t m = 0; m < k; ++m) {
              std::ptrdiff_t src;
              if (mode_ == Mode::Causal)
                src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>((k - 1 - m) * d);
              else
                src = static_cast<std::ptrdiff_t>(t) +
                      (static_cast<std::ptrdiff_t>(m) - static_cast<std::ptrdiff_t>((k - 1) / 2)) *
                          static_cast<std::ptrdiff_t>(d);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
              acc += L.conv_w[(o * C + c) * k + m] * h[c][static_cast<std::size_t>(src)];
            }
          a[o][t] = acc;
        }
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> gate(C);
        for (std::size_t c = 0; c < C; ++c) gate[c] = std::tanh(a[c][t]) / (1.0 + std::exp(-a[C + c][t]));
        for (std::size_t o = 0; o < 2 * C; ++o) {
          double r = L.rs_b[o];
          for (std::size_t c = 0; c < C; ++c) r += L.rs_w[o * C + c] * gate[c];
          if (o < C)
            h[o][t] += r;
          else
            skip[o - C][t] += r;
        }
      }
    }
    std::vector<Affine> out(n);
    for (std::size_t t = 0; t < n; ++t) {
      double mu = w_.end_b[0], ls = w_.end_b[1];
      for (std::size_t c = 0; c < C; ++c) {
        mu += w_.end_w[c] * skip[c][t];
        ls += w_.end_w[C + c] * skip[c][t];
      }
      out[t] = {mu, ls};
    }
    return out;
  }

  /// Autoregressive conditional: the network run over [0, x_0, ..., x_{t-1}],
  /// read at position t.
  AfConditional af_conditional() const {
    return [this](std::span<const double> prefix, std::size_t t) {
      std::vector<double> s(t + 1, 0.0);
      for (std::size_t u = 0; u < t; ++u) s[u + 1] = prefix[u];
      return eval(s)[t];
    };
  }

  /// Bipartite conditional: the network run over x_a along width.
  BipartiteConditional bipartite_conditional() const {
    return [this](std::span<const double> xa) { return eval(std::vector<double>(xa.begin(), xa.end())); };
  }

 private:
  NetShape shape_;
  NetWeights<Tensor<double>> w_;
  Mode mode_;
};

}  // namespace waveflow::reference
