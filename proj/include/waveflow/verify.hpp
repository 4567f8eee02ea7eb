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

// Self-checks behind `waveflow verify`: round trips, brute-force Jacobians,
// gradient checks and the special-case equivalences, each reported as a
// pass/fail row.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "waveflow/autodiff.hpp"
#include "waveflow/flow.hpp"
#include "waveflow/model.hpp"
#include "waveflow/network.hpp"
#include "waveflow/reference.hpp"
#include "waveflow/signal.hpp"
#include "waveflow/synth.hpp"

namespace waveflow::verify {

using Vec = std::vector<double>;
using Matrix = std::vector<Vec>;  // row-major, J[out][in]

/// Central-difference Jacobian of f at x.
inline Matrix numerical_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double eps = 1e-6) {
  const std::size_t n = x.size();
  const std::size_t m = f(x).size();
  Matrix J(m, Vec(n));
  Vec xp = x;
  for (std::size_t k = 0; k < n; ++k) {
    xp[k] = x[k] + eps;
    const Vec fp = f(xp);
    xp[k] = x[k] - eps;
    const Vec fm = f(xp);
    xp[k] = x[k];
    for (std::size_t r = 0; r < m; ++r) J[r][k] = (fp[r] - fm[r]) / (2 * eps);
  }
  return J;
}

/// log|det A| by LU with partial pivoting.
inline double log_abs_det(Matrix a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    if (a[p][c] == 0.0) return -INFINITY;
    std::swap(a[p], a[c]);
    acc += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return acc;
}

/// Adds N(0, scale^2) noise to every parameter, including the zero-initialized
/// output projection, so flows are no longer the identity.
template <class T>
void perturb_parameters(WaveFlowModel<T>& m, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, t] : m.params) {
    if (name.rfind("upsampler.", 0) == 0) continue;
    for (auto& v : t.storage()) v = static_cast<T>(v + n(rng));
  }
}

template <class T>
Vec grid_to_vec(const WaveGrid<T>& g) {
  return Vec(g.values.begin(), g.values.end());
}

template <class T>
WaveGrid<T> vec_to_grid(const Vec& v, std::size_t h, std::size_t w) {
  WaveGrid<T> g(h, w);
  for (std::size_t k = 0; k < v.size(); ++k) g.values[k] = static_cast<T>(v[k]);
  return g;
}

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline ModelConfig tiny_config(std::size_t h, std::size_t flows, std::size_t layers, std::size_t channels) {
  ModelConfig c;
  c.name = "verify";
  c.h = h;
  c.n_flows = flows;
  c.n_layers = layers;
  c.residual_channels = channels;
  c.conditioned = false;
  return c;
}

/// Runs the suite. "fast" uses small grids; "full" adds 6x6 and 8x8 Jacobians
/// and more seeds.
inline std::vector<CheckResult> run_suite(const std::string& level, std::uint64_t seed) {
  if (level != "fast" && level != "full") throw ValidationError("verify: level must be fast or full");
  const bool full = level == "full";
  std::vector<CheckResult> out;
  auto run = [&out](const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r{name, false, "", 0.0};
    try {
      auto [ok, detail] = body();
      r.passed = ok;
      r.detail = detail;
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(r);
  };
  auto fmt = [](const char* what, double v) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %.3e", what, v);
    return std::string(buf);
  };

  run("squeeze/unsqueeze round trip", [] {
    for (std::size_t n = 1; n <= 64; ++n)
      for (std::size_t h = 1; h <= n; ++h) {
        if (n % h) continue;
        Waveform x;
        for (std::size_t k = 0; k < n; ++k) x.samples.push_back(static_cast<double>(k) * 0.01 - 0.3);
        if (unsqueeze(squeeze<double>(x, h)).samples != x.samples) return std::make_pair(false, std::string("n=") + std::to_string(n));
      }
    return std::make_pair(true, std::string("all divisors of lengths 1..64"));
  });

  run("permutations are involutions", [] {
    for (std::size_t h = 1; h <= 64; ++h) {
      for (const auto& p : {Permutation::reverse(h), Permutation::bipartite_reverse(h)}) {
        if (!p.is_bijection() || p.inverse().row_map != p.row_map) return std::make_pair(false, "h=" + std::to_string(h));
      }
    }
    return std::make_pair(true, std::string("h = 1..64"));
  });

  run("receptive field table", [] {
    const std::pair<std::size_t, std::size_t> rows[] = {{8, 17}, {16, 17}, {32, 35}, {64, 77}};
    for (auto [h, r] : rows)
      if (receptive_field(3, default_dilations(h)) != r) return std::make_pair(false, "h=" + std::to_string(h));
    return std::make_pair(true, std::string("h=8,16,32,64 -> 17,17,35,77"));
  });

  run("invertibility fp64/fp32", [&] {
    double worst64 = 0.0, worst32 = 0.0;
    const std::size_t seeds = full ? 10 : 3;
    for (std::size_t h : {2u, 8u, 16u})
      for (std::size_t flows : {1u, 4u, 8u}) {
        if (!full && flows == 8) continue;
        for (std::size_t s = 0; s < seeds; ++s) {
          auto m = WaveFlowModel<double>::init(tiny_config(h, flows, 2, 4), seed + s);
          perturb_parameters(m, seed + 1000 + s, 0.1);
          const auto fs = m.stack();
          std::mt19937_64 rng(seed + s);
          const auto x = sample_latent<double>(h, 8, 0.5, rng);
          const auto z = stack_inverse_grid(x, {}, fs).z0;
          const auto back = stack_forward_grid(z, {}, fs);
          for (std::size_t k = 0; k < x.size(); ++k) worst64 = std::max(worst64, std::abs(back.values[k] - x.values[k]));
          const auto m32 = m.cast<float>();
          const auto fs32 = m32.stack();
          WaveGrid<float> x32(h, 8);
          for (std::size_t k = 0; k < x.size(); ++k) x32.values[k] = static_cast<float>(x.values[k]);
          const auto b32 = stack_forward_grid(stack_inverse_grid(x32, {}, fs32).z0, {}, fs32);
          for (std::size_t k = 0; k < x.size(); ++k)
            worst32 = std::max(worst32, std::abs(static_cast<double>(b32.values[k]) - x32.values[k]));
        }
      }
    return std::make_pair(worst64 <= 1e-9 && worst32 <= 1e-4, fmt("fp64", worst64) + ", " + fmt("fp32", worst32));
  });

  run("log-det vs brute-force Jacobian", [&] {
    double worst = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> grids = {{4, 6}};
    if (full) grids.emplace_back(6, 6);
    for (auto [h, w] : grids)
      for (std::size_t flows : {1u, 2u}) {
        auto m = WaveFlowModel<double>::init(tiny_config(h, flows, 2, 4), seed);
        perturb_parameters(m, seed + 7, 0.2);
        const auto fs = m.stack();
        std::mt19937_64 rng(seed + 3);
        const auto x = sample_latent<double>(h, w, 0.5, rng);
        const double analytic = stack_inverse_grid(x, {}, fs).report.logdet_sum;
        auto f = [&](const Vec& v) { return grid_to_vec(stack_inverse_grid(vec_to_grid<double>(v, h, w), {}, fs).z0); };
        const double brute = log_abs_det(numerical_jacobian(f, grid_to_vec(x)));
        worst = std::max(worst, std::abs(analytic - brute) / std::max(1.0, std::abs(brute)));
      }
    return std::make_pair(worst <= 1e-5, fmt("max rel err", worst));
  });

  run("height causality (triangular Jacobian)", [&] {
    const std::size_t h = full ? 8 : 4, w = full ? 8 : 4;
    auto m = WaveFlowModel<double>::init(tiny_config(h, 1, 3, 4), seed);
    perturb_parameters(m, seed + 11, 0.2);
    const auto net = m.stack().flows[0];
    std::mt19937_64 rng(seed + 5);
    const auto x = sample_latent<double>(h, w, 0.5, rng);
    auto f = [&](const Vec& v) { return grid_to_vec(flow_inverse(vec_to_grid<double>(v, h, w), nullptr, net).z); };
    const auto J = numerical_jacobian(f, grid_to_vec(x));
    const auto ls = flow_inverse(x, nullptr, net).log_scale;
    double upper = 0.0, diag = 0.0;
    for (std::size_t r = 0; r < J.size(); ++r)
      for (std::size_t c = 0; c < J.size(); ++c) {
        if (c > r) upper = std::max(upper, std::abs(J[r][c]));
        if (c == r) diag = std::max(diag, std::abs(J[r][c] - std::exp(ls.values[r])));
      }
    return std::make_pair(upper <= 1e-6 && diag <= 1e-6, fmt("max upper", upper) + ", " + fmt("diag err", diag));
  });

  run("gradient check (tape vs central differences)", [&] {
    auto m = WaveFlowModel<double>::init(tiny_config(4, 1, 2, 4), seed);
    perturb_parameters(m, seed + 13, 0.2);
    std::mt19937_64 rng(seed + 17);
    const auto X = sample_latent<double>(4, 8, 0.5, rng);
    auto loss_of = [&](const WaveFlowModel<double>& mm) {
      Eager<double> be;
      auto w = bind_weights(be, mm);
      return model_nll(be, mm.config, w, mm.permutations(), X.as_tensor(), nullptr)[0];
    };
    Tape<double> tape;
    auto w = bind_weights(tape, m);
    auto loss = model_nll(tape, m.config, w, m.permutations(), tape.constant(X.as_tensor()), nullptr);
    tape.backward(loss);
    const auto grads = tape.gradients();
    double worst = 0.0;
    const std::size_t stride = full ? 1 : 7;
    for (auto& [name, t] : m.params) {
      for (std::size_t k = 0; k < t.size(); k += stride) {
        const double orig = t[k];
        const double eps = 1e-5;
        t[k] = orig + eps;
        const double lp = loss_of(m);
        t[k] = orig - eps;
        const double lm = loss_of(m);
        t[k] = orig;
        const double fd = (lp - lm) / (2 * eps);
        const double an = grads.at(name)[k];
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-3, std::abs(fd) + std::abs(an)));
      }
    }
    return std::make_pair(worst <= 1e-4, fmt("max rel err", worst));
  });

  run("WaveFlow(h=n, width filter 1) == autoregressive reference", [&] {
    const std::size_t n = 16;
    ModelConfig c = tiny_config(n, 1, 3, 4);
    c.kernel_w = 1;
    c.dilations_h = {1, 2, 4};
    c.dilations_w = {1, 1, 1};
    auto m = WaveFlowModel<double>::init(c, seed);
    perturb_parameters(m, seed + 19, 0.2);
    const auto net = m.stack().flows[0];
    std::mt19937_64 rng(seed + 23);
    const auto X = sample_latent<double>(n, 1, 0.5, rng);
    const auto z = flow_inverse(X, nullptr, net);
    reference::Sequence1dNet ref(net.shape, net.weights, reference::Sequence1dNet::Mode::Causal);
    const auto r = reference::af_inverse(X.values, ref.af_conditional());
    double worst = std::abs(r.logdet - z.logdet);
    for (std::size_t t = 0; t < n; ++t) worst = std::max(worst, std::abs(r.z[t] - z.z.values[t]));
    return std::make_pair(worst <= 1e-6, fmt("max abs diff", worst));
  });

  run("WaveFlow(h=2, height filter 1) == bipartite reference", [&] {
    const std::size_t w = 8;
    ModelConfig c = tiny_config(2, 1, 3, 4);
    c.kernel_h = 1;
    auto m = WaveFlowModel<double>::init(c, seed);
    perturb_parameters(m, seed + 29, 0.2);
    for (auto& [name, t] : m.params)  // zero biases: row 0 maps to itself
      if (name.back() == 'b') t.fill(0.0);
    const auto net = m.stack().flows[0];
    std::mt19937_64 rng(seed + 31);
    const auto X = sample_latent<double>(2, w, 0.5, rng);
    const auto z = flow_inverse(X, nullptr, net);
    reference::Sequence1dNet ref(net.shape, net.weights, reference::Sequence1dNet::Mode::Centered);
    const Vec xa(X.row(0).begin(), X.row(0).end()), xb(X.row(1).begin(), X.row(1).end());
    const auto r = reference::bipartite_inverse(xa, xb, ref.bipartite_conditional());
    double worst = std::abs(r.logdet - z.logdet);
    for (std::size_t j = 0; j < w; ++j)
      worst = std::max({worst, std::abs(r.a[j] - z.z(0, j)), std::abs(r.b[j] - z.z(1, j))});
    return std::make_pair(worst <= 1e-6, fmt("max abs diff", worst));
  });

  run("queued synthesis == naive synthesis", [&] {
    double worst = 0.0;
    for (std::size_t h : {8u, 16u}) {
      ModelConfig c = tiny_config(h, full ? 8 : 2, 4, 8);
      auto m = WaveFlowModel<float>::init(c, seed);
      perturb_parameters(m, seed + 37, 0.05);
      const auto fs = m.stack();
      std::mt19937_64 rng(seed + 41);
      const auto z = sample_latent<float>(h, 32, 1.0, rng);
      SynthStats sq, sn;
      const auto a = synth_queued_grid(z, {}, fs, &sq);
      const auto b = stack_forward_grid(z, {}, fs, &sn);
      if (sq.row_steps != c.n_flows * h || sn.row_steps != c.n_flows * h)
        return std::make_pair(false, std::string("sequential step count mismatch"));
      for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(double(a.values[k]) - b.values[k]));
    }
    return std::make_pair(worst <= 1e-5, fmt("max abs diff", worst));
  });

  return out;
}

}  // namespace waveflow::verify
