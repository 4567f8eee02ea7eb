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

// Test-side generators and oracles. Nothing here calls into the engine's own
// verification helpers, so a bug there cannot hide a bug in the engine.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "waveflow/waveflow.hpp"

namespace wft {

using namespace waveflow;

// ---- generators -------------------------------------------------------------

/// Small deterministic generator wrapper for property tests.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  std::size_t size(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng); }

  std::vector<double> signal(std::size_t n, double sd = 0.5) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(sd);
    return v;
  }
  template <class T>
  WaveGrid<T> grid(std::size_t h, std::size_t w, double sd = 0.5) {
    WaveGrid<T> g(h, w);
    for (auto& x : g.values) x = static_cast<T>(normal(sd));
    return g;
  }
  template <class T>
  Tensor<T> tensor(const Shape& s, double sd = 1.0) {
    Tensor<T> t(s);
    for (auto& x : t.storage()) x = static_cast<T>(normal(sd));
    return t;
  }
  Permutation permutation(std::size_t h) {
    Permutation p = Permutation::identity(h);
    p.kind = Permutation::Kind::Custom;
    std::shuffle(p.row_map.begin(), p.row_map.end(), rng);
    return p;
  }
};

/// Unconditioned model config small enough for brute-force oracles.
inline ModelConfig small_config(std::size_t h, std::size_t flows, std::size_t layers = 2, std::size_t channels = 4) {
  ModelConfig c;
  c.name = "test";
  c.h = h;
  c.n_flows = flows;
  c.n_layers = layers;
  c.residual_channels = channels;
  c.conditioned = false;
  return c;
}

/// Fresh model with every non-upsampler parameter jittered, so no flow is the
/// identity.
template <class T>
WaveFlowModel<T> random_model(const ModelConfig& c, std::uint64_t seed, double jitter = 0.15) {
  auto m = WaveFlowModel<T>::init(c, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> n(0.0, jitter);
  for (auto& [name, t] : m.params) {
    if (name.starts_with("upsampler.")) continue;
    for (auto& v : t.storage()) v = static_cast<T>(v + n(rng));
  }
  return m;
}

// ---- oracles ----------------------------------------------------------------

using Fn = std::function<std::vector<double>(const std::vector<double>&)>;

/// Central-difference Jacobian, J(out, in).
inline Eigen::MatrixXd fd_jacobian(const Fn& f, const std::vector<double>& x, double eps = 1e-6) {
  const auto y0 = f(x);
  Eigen::MatrixXd J(static_cast<Eigen::Index>(y0.size()), static_cast<Eigen::Index>(x.size()));
  auto xp = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    xp[k] = x[k] + eps;
    const auto a = f(xp);
    xp[k] = x[k] - eps;
    const auto b = f(xp);
    xp[k] = x[k];
    for (std::size_t r = 0; r < a.size(); ++r) J(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = (a[r] - b[r]) / (2 * eps);
  }
  return J;
}

/// log|det J| from Eigen's partial-pivot LU.
inline double log_abs_det(const Eigen::MatrixXd& J) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
  const Eigen::MatrixXd& U = lu.matrixLU();
  double s = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) s += std::log(std::abs(U(i, i)));
  return s;
}

template <class T>
std::vector<double> flat(const WaveGrid<T>& g) {
  return {g.values.begin(), g.values.end()};
}

template <class T>
WaveGrid<T> grid_of(const std::vector<double>& v, std::size_t h, std::size_t w) {
  WaveGrid<T> g(h, w);
  for (std::size_t k = 0; k < v.size(); ++k) g.values[k] = static_cast<T>(v[k]);
  return g;
}

template <class T>
double max_abs(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(static_cast<double>(a[k]) - static_cast<double>(b[k])));
  return m;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("waveflow_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace wft
