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

// Maximum-likelihood training: hop-aligned random clips, one tape per batch
// item, gradients summed in a fixed order, and Adam with a constant rate.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "waveflow/autodiff.hpp"
#include "waveflow/conditioner.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/io.hpp"
#include "waveflow/model.hpp"
#include "waveflow/signal.hpp"
#include "waveflow/wav.hpp"

namespace waveflow {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 8;
  std::size_t clip_length = 16000;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 0;  // 0: only at the end
  double max_grad_norm = 0.0;           // 0: no clipping
  std::size_t threads = 1;
  std::string out_dir;                  // empty: no files written

  /// Small settings that finish in minutes on one core.
  static TrainConfig desk() {
    TrainConfig c;
    c.batch_size = 2;
    c.clip_length = 4096;
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("train: learning rate must be positive");
    if (batch_size == 0) throw ValidationError("train: batch size must be positive");
    if (clip_length == 0) throw ValidationError("train: clip length must be positive");
    if (max_grad_norm < 0.0) throw ValidationError("train: max grad norm must be >= 0");
    if (threads == 0) throw ValidationError("train: threads must be positive");
  }
};

/// w = g * v / ||v|| with one magnitude per output channel.
template <class T>
struct WeightNormParam {
  Tensor<T> v;
  Tensor<T> g;

  static WeightNormParam from_weight(const Tensor<T>& w) { return {w, channel_norms(w)}; }
  Tensor<T> weight() const { return kernels::weight_norm(v, g); }
};

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments;  // name -> (m, v)
};

/// Bias-corrected Adam. A non-finite gradient skips the whole step (and
/// counts it); returns whether the update was applied.
template <class T>
bool adam_step(ParamStore<T>& params, const Gradients<T>& grads, AdamState<T>& st, double lr) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ValidationError("adam_step: gradient for unknown parameter " + name);
    if (g.shape() != params.at(name).shape()) throw ValidationError("adam_step: shape mismatch for " + name);
    if (!g.all_finite()) {
      ++st.skipped;
      return false;
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto it = st.moments.find(name);
    if (it == st.moments.end())
      it = st.moments.emplace(name, std::make_pair(Tensor<T>(p.shape()), Tensor<T>(p.shape()))).first;
    auto& [m, v] = it->second;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = st.beta1 * m[k] + (1.0 - st.beta1) * gk;
      const double vk = st.beta2 * v[k] + (1.0 - st.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + st.eps));
    }
  }
  return true;
}

template <class T>
double gradient_norm(const Gradients<T>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (T v : g.storage()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

// ---- data ---------------------------------------------------------------

struct Utterance {
  std::string source;
  Waveform audio;
  MelSpectrogram mel;  // of the audio zero-padded to at least one clip; empty when unconditioned
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(MelConfig mel, bool conditioned, std::size_t clip_length)
      : mel_(mel), conditioned_(conditioned), clip_(clip_length) {}

  /// Mel features are computed once per utterance here and sliced per clip.
  void add(Waveform audio, std::string source = {}) {
    Utterance u{std::move(source), std::move(audio), {}};
    if (conditioned_) {
      Waveform padded = u.audio;
      const std::size_t need = std::max({u.audio.size(), clip_, mel_.window});
      padded.samples.resize(need, 0.0);
      u.mel = mel_spectrogram(padded, mel_);
    }
    utts_.push_back(std::move(u));
  }

  static Dataset from_manifest(const std::string& path, const ModelConfig& cfg, std::size_t clip_length) {
    Dataset d(cfg.mel, cfg.conditioned, clip_length);
    for (const auto& e : io::read_manifest(path)) d.add(wav::read(e.path), e.path);
    return d;
  }

  std::size_t size() const noexcept { return utts_.size(); }
  bool empty() const noexcept { return utts_.empty(); }
  const Utterance& operator[](std::size_t k) const { return utts_.at(k); }
  bool conditioned() const noexcept { return conditioned_; }
  const MelConfig& mel_config() const noexcept { return mel_; }

 private:
  MelConfig mel_;
  bool conditioned_ = false;
  std::size_t clip_ = 0;
  std::vector<Utterance> utts_;
};

/// Toy audio: two or three sinusoids (110 to 880 Hz, random phases) whose
/// amplitudes sum to at most 0.8.
inline Waveform toy_sine_mixture(std::size_t n, std::uint32_t sample_rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(110.0, 880.0), phase(0.0, 2.0 * std::numbers::pi), amp(0.2, 1.0);
  const int parts = std::uniform_int_distribution<int>(2, 3)(rng);
  std::vector<double> f(parts), p(parts), a(parts);
  double total = 0.0;
  for (int k = 0; k < parts; ++k) {
    f[k] = freq(rng);
    p[k] = phase(rng);
    a[k] = amp(rng);
    total += a[k];
  }
  Waveform x;
  x.sample_rate = sample_rate;
  x.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    double v = 0.0;
    for (int k = 0; k < parts; ++k)
      v += a[k] / total * 0.8 * std::sin(2.0 * std::numbers::pi * f[k] * static_cast<double>(t) / sample_rate + p[k]);
    x.samples[t] = v;
  }
  return x;
}

struct Clip {
  Waveform audio;
  MelSpectrogram mel;
  std::size_t utterance = 0;
  std::size_t start = 0;
};

/// Uniform utterance, then a uniform hop-aligned start in
/// {0, hop, ..., floor((len - clip) / hop) * hop}. Short utterances are
/// zero-padded at the tail and start at 0.
inline Clip sample_clip(const Dataset& data, std::size_t clip_length, std::mt19937_64& rng) {
  if (data.empty()) throw ValidationError("sample_clip: empty dataset");
  const std::size_t hop = data.mel_config().hop;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Clip c;
  c.utterance = pick(rng);
  const Utterance& u = data[c.utterance];
  const std::size_t len = u.audio.size();
  if (len > clip_length) {
    std::uniform_int_distribution<std::size_t> off(0, (len - clip_length) / hop);
    c.start = off(rng) * hop;
  }
  c.audio.sample_rate = u.audio.sample_rate;
  c.audio.samples.assign(clip_length, 0.0);
  for (std::size_t k = 0; k < clip_length && c.start + k < len; ++k) c.audio.samples[k] = u.audio.samples[c.start + k];
  if (data.conditioned()) {
    const std::size_t frames = (clip_length + hop - 1) / hop;
    c.mel = u.mel.slice(c.start / hop, frames, std::log(data.mel_config().floor));
  }
  return c;
}

// ---- loss and gradients ----------------------------------------------------

template <class T>
struct BatchResult {
  double loss = 0.0;  // mean over items, nats per dimension
  std::vector<double> item_losses;
  Gradients<T> grads;  // mean over items
};

/// Loss and parameter gradients of one clip on its own tape.
template <class T>
std::pair<double, Gradients<T>> clip_loss_and_grad(const WaveFlowModel<T>& model, const Clip& clip) {
  const auto& cfg = model.config;
  const auto padded = pad_to_multiple(clip.audio, cfg.h);
  const auto X = squeeze<T>(padded.waveform, cfg.h);
  Tape<T> tape;
  auto w = bind_weights(tape, model);
  auto x = tape.constant(X.as_tensor());
  typename Tape<T>::Var mel;
  if (cfg.conditioned) {
    const std::size_t hop = cfg.upsampler.factor();
    const std::size_t frames = (X.h * X.w + hop - 1) / hop;
    mel = tape.constant(clip.mel.slice(0, frames, std::log(cfg.mel.floor)).template as_tensor<T>());
  }
  auto loss = model_nll(tape, cfg, w, model.permutations(), x, cfg.conditioned ? &mel : nullptr);
  tape.backward(loss);
  return {static_cast<double>(tape.value_of(loss)[0]), tape.gradients()};
}

/// Items may run on several threads; the reduction order is fixed, so results
/// do not depend on the thread count.
template <class T>
BatchResult<T> batch_loss_and_grad(const WaveFlowModel<T>& model, const std::vector<Clip>& clips,
                                   std::size_t threads = 1) {
  std::vector<std::pair<double, Gradients<T>>> items(clips.size());
  std::vector<std::exception_ptr> errors(clips.size());
  auto work = [&](std::size_t k) {
    try {
      items[k] = clip_loss_and_grad(model, clips[k]);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (threads <= 1 || clips.size() <= 1) {
    for (std::size_t k = 0; k < clips.size(); ++k) work(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, clips.size()); ++t)
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < clips.size(); k += threads) work(k);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchResult<T> r;
  const T inv = T{1} / static_cast<T>(clips.size());
  for (auto& [loss, g] : items) {
    r.item_losses.push_back(loss);
    r.loss += loss / static_cast<double>(clips.size());
    for (auto& [name, t] : g) {
      auto it = r.grads.find(name);
      if (it == r.grads.end()) it = r.grads.emplace(name, Tensor<T>(t.shape())).first;
      for (std::size_t k = 0; k < t.size(); ++k) it->second[k] += t[k] * inv;
    }
  }
  return r;
}

// ---- loop -----------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
  bool applied = true;
};

struct TrainResult {
  std::vector<StepRecord> records;
  std::vector<std::string> checkpoints;
  std::size_t skipped_steps = 0;
};

inline std::string checkpoint_prefix(const std::string& dir, std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%07zu", step);
  return (std::filesystem::path(dir) / buf).string();
}

/// Trains `model` in place. With an out_dir, writes metrics.ndjson and
/// checkpoints every checkpoint_interval steps and at the end. A non-finite
/// loss halts with last_batch.json describing the offending batch.
template <class T>
TrainResult train_loop(const TrainConfig& cfg, WaveFlowModel<T>& model, const Dataset& data,
                       const std::function<void(const StepRecord&)>& on_step = {}) {
  cfg.validate();
  if (data.empty()) throw ValidationError("train: empty dataset");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  std::mt19937_64 rng(cfg.seed);
  AdamState<T> adam;
  TrainResult res;
  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics.open((std::filesystem::path(cfg.out_dir) / "metrics.ndjson").string());
    if (!metrics) throw ValidationError("cannot write metrics log in " + cfg.out_dir);
  }
  auto save = [&](std::size_t step) {
    if (cfg.out_dir.empty()) return;
    const auto prefix = checkpoint_prefix(cfg.out_dir, step);
    io::save_checkpoint(prefix, model, step, cfg.seed);
    res.checkpoints.push_back(prefix);
  };

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<Clip> clips;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) clips.push_back(sample_clip(data, cfg.clip_length, rng));

    auto dump = [&](const std::string& why, const std::vector<double>& losses) {
      if (cfg.out_dir.empty()) return;
      io::json j{{"step", step}, {"reason", why}};
      for (std::size_t b = 0; b < clips.size(); ++b) {
        io::json item{{"utterance", clips[b].utterance},
                      {"source", data[clips[b].utterance].source},
                      {"start", clips[b].start}};
        if (b < losses.size()) item["loss"] = std::isfinite(losses[b]) ? io::json(losses[b]) : io::json("non-finite");
        j["batch"].push_back(item);
      }
      std::ofstream((std::filesystem::path(cfg.out_dir) / "last_batch.json").string()) << j.dump(2) << "\n";
    };

    BatchResult<T> br;
    try {
      br = batch_loss_and_grad(model, clips, cfg.threads);
    } catch (const NumericalError& e) {
      dump(e.what(), {});
      throw NumericalError(std::string("training halted at step ") + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(br.loss)) {
      dump("non-finite loss", br.item_losses);
      throw NumericalError("training halted at step " + std::to_string(step) + ": non-finite loss");
    }

    StepRecord rec;
    rec.step = step;
    rec.loss = br.loss;
    rec.grad_norm = gradient_norm(br.grads);
    if (cfg.max_grad_norm > 0.0 && rec.grad_norm > cfg.max_grad_norm) {
      const T s = static_cast<T>(cfg.max_grad_norm / rec.grad_norm);
      for (auto& [name, g] : br.grads)
        for (auto& v : g.storage()) v *= s;
    }
    rec.applied = adam_step(model.params, br.grads, adam, cfg.learning_rate);
    rec.wall_time = std::chrono::duration<double>(clock::now() - t0).count();
    res.records.push_back(rec);
    if (metrics.is_open())
      metrics << io::json{{"step", rec.step}, {"loss", rec.loss}, {"grad_norm", rec.grad_norm}, {"wall_time", rec.wall_time}}
                     .dump()
              << "\n";
    if (on_step) on_step(rec);
    if (cfg.checkpoint_interval && step % cfg.checkpoint_interval == 0) save(step);
  }
  if (cfg.max_steps > 0 && (cfg.checkpoint_interval == 0 || cfg.max_steps % cfg.checkpoint_interval != 0))
    save(cfg.max_steps);
  res.skipped_steps = adam.skipped;
  return res;
}

}  // namespace waveflow
