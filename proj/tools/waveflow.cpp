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

// waveflow: train, synthesize, score and benchmark WaveFlow models.
// Exit codes: 0 success, 1 invalid input, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include "waveflow/waveflow.hpp"

namespace fs = std::filesystem;
using namespace waveflow;
using io::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string precision = "fp32";
  bool json = false;
  std::size_t threads = 1;
};

void emit(const Globals& g, const json& j, const std::string& text) {
  if (g.json)
    std::cout << j.dump() << "\n";
  else
    std::cout << text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config = "desk";
  std::string manifest;
  std::string out_dir = "run";
  std::size_t steps = 1000;
  double lr = 2e-4;
  std::size_t batch = 8;
  std::size_t clip = 16000;
  std::size_t interval = 0;
  double max_grad_norm = 0.0;
};

template <class T>
int cmd_train(const Globals& g, const TrainArgs& a) {
  auto loaded = io::load_config(a.config);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch;
  tc.clip_length = a.clip;
  tc.max_steps = a.steps;
  tc.seed = g.seed;
  tc.checkpoint_interval = a.interval;
  tc.max_grad_norm = a.max_grad_norm;
  tc.threads = g.threads;
  tc.out_dir = a.out_dir;
  tc.validate();
  const auto data = Dataset::from_manifest(a.manifest, loaded.config, tc.clip_length);
  auto model = WaveFlowModel<T>::init(loaded.config, g.seed);
  auto res = train_loop(tc, model, data, [&g](const StepRecord& r) {
    if (!g.json && (r.step == 1 || r.step % 50 == 0))
      std::cerr << "step " << r.step << " loss " << r.loss << " grad_norm " << r.grad_norm << "\n";
  });
  json j{{"steps", a.steps},
         {"final_loss", res.records.empty() ? 0.0 : res.records.back().loss},
         {"checkpoints", res.checkpoints},
         {"skipped_steps", res.skipped_steps},
         {"parameters", model.parameter_count()}};
  emit(g, j,
       "trained " + std::to_string(a.steps) + " steps, final loss " +
           (res.records.empty() ? std::string("n/a") : fmt("%.6f", res.records.back().loss)) + " nats/dim, " +
           std::to_string(res.checkpoints.size()) + " checkpoint(s) in " + a.out_dir + "\n");
  return 0;
}

// ---- init ------------------------------------------------------------------

int cmd_init(const Globals& g, const std::string& config, const std::string& out) {
  auto loaded = io::load_config(config);
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
  auto model = WaveFlowModel<float>::init(loaded.config, g.seed);
  io::save_checkpoint(out, model, 0, g.seed);
  emit(g, json{{"checkpoint", out}, {"parameters", model.parameter_count()}},
       "wrote " + out + " (" + std::to_string(model.parameter_count()) + " parameters)\n");
  return 0;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string checkpoint;
  std::string mel;
  std::string wav_for_mel;
  std::size_t samples = 22050;
  double stddev = 1.0;
  std::string out = "out.wav";
  std::string engine = "queued";
};

template <class T>
int cmd_synth(const Globals& g, const SynthArgs& a) {
  const auto ck = io::load_checkpoint<T>(a.checkpoint);
  const auto& cfg = ck.model.config;
  const auto stack = ck.model.stack();
  std::optional<MelSpectrogram> mel;
  std::size_t width = 0, trim = 0;
  if (cfg.conditioned) {
    if (!a.mel.empty())
      mel = io::load_mel(a.mel);
    else if (!a.wav_for_mel.empty())
      mel = mel_spectrogram(wav::read(a.wav_for_mel), cfg.mel);
    else
      throw ValidationError("synth: this model is conditioned; pass --mel or --wav-for-mel");
    width = mel->n_frames * cfg.upsampler.factor() / cfg.h;
    if (width == 0) throw ValidationError("synth: mel spectrogram is too short for h=" + std::to_string(cfg.h));
  } else {
    width = (a.samples + cfg.h - 1) / cfg.h;
    trim = width * cfg.h - a.samples;
  }
  std::mt19937_64 rng(g.seed);
  const auto z = sample_latent<T>(cfg.h, width, a.stddev, rng);
  const MelSpectrogram* mp = mel ? &*mel : nullptr;
  SynthStats st;
  Waveform out;
  json j{{"engine", a.engine}, {"std", a.stddev}};
  if (a.engine == "naive") {
    out = synth_naive(z, mp, stack, &st, trim);
  } else if (a.engine == "queued") {
    out = synth_queued(z, mp, stack, &st, trim);
  } else if (a.engine == "both") {
    SynthStats sn;
    out = synth_queued(z, mp, stack, &st, trim);
    const auto ref = synth_naive(z, mp, stack, &sn, trim);
    double diff = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) diff = std::max(diff, std::abs(out.samples[k] - ref.samples[k]));
    j["max_abs_diff"] = diff;
  } else {
    throw ValidationError("synth: --engine must be naive, queued or both");
  }
  wav::write(a.out, out);
  j["out"] = a.out;
  j["samples"] = out.size();
  j["sequential_steps"] = st.row_steps;
  j["floored"] = st.floored;
  std::string text = "wrote " + a.out + " (" + std::to_string(out.size()) + " samples, " +
                     std::to_string(st.row_steps) + " sequential steps, " + std::to_string(st.floored) +
                     " floored scales)\n";
  if (j.contains("max_abs_diff")) text += "max abs diff queued vs naive: " + fmt("%.3e", j["max_abs_diff"].get<double>()) + "\n";
  emit(g, j, text);
  return 0;
}

// ---- loglik ----------------------------------------------------------------

template <class T>
int cmd_loglik(const Globals& g, const std::string& checkpoint, const std::string& wav_path) {
  const auto ck = io::load_checkpoint<T>(checkpoint);
  const auto& cfg = ck.model.config;
  const auto x = wav::read(wav_path);
  const auto padded = pad_to_multiple(x, cfg.h);
  std::optional<MelSpectrogram> mel;
  if (cfg.conditioned) mel = mel_spectrogram(padded.waveform, cfg.mel);
  const auto r = stack_inverse(padded.waveform, mel ? &*mel : nullptr, ck.model.stack());
  const auto& rep = r.report;
  json j{{"total_loglik", rep.total_loglik},
         {"per_dim_loglik", rep.per_dim_loglik},
         {"logdet_sum", rep.logdet_sum},
         {"base_term", rep.base_term},
         {"dims", rep.dims},
         {"pad_count", padded.pad_count}};
  emit(g, j,
       "total_loglik " + fmt("%.6f", rep.total_loglik) + " nats\nper_dim_loglik " + fmt("%.6f", rep.per_dim_loglik) +
           " nats/sample\nlogdet_sum " + fmt("%.6f", rep.logdet_sum) + "\nbase_term " + fmt("%.6f", rep.base_term) +
           "\ndims " + std::to_string(rep.dims) + "\n");
  return 0;
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  std::string config = "desk";
  std::size_t width = 16;
  std::size_t repeats = 1;
  bool no_naive = false;
};

template <class T>
int cmd_bench(const Globals& g, const BenchArgs& a) {
  WaveFlowModel<T> model = !a.checkpoint.empty() ? io::load_checkpoint<T>(a.checkpoint).model
                                                 : WaveFlowModel<T>::init(io::load_config(a.config).config, g.seed);
  const auto stack = model.stack();
  std::optional<MelSpectrogram> mel;
  if (model.config.conditioned) {
    const std::size_t hop = model.config.upsampler.factor();
    const std::size_t frames = (model.config.h * a.width + hop - 1) / hop;
    std::mt19937_64 rng(g.seed + 1);
    std::normal_distribution<double> n(-4.0, 1.0);
    mel = MelSpectrogram{frames, model.config.mel.n_mels, {}};
    for (std::size_t k = 0; k < frames * mel->n_mels; ++k) mel->values.push_back(n(rng));
  }
  BenchOptions opt;
  opt.width = a.width;
  opt.seed = g.seed;
  opt.repeats = a.repeats;
  opt.run_naive = !a.no_naive;
  const auto r = bench(stack, mel ? &*mel : nullptr, opt);
  json j{{"naive_seconds", r.naive_seconds},
         {"queued_seconds", r.queued_seconds},
         {"sequential_steps", r.sequential_steps},
         {"samples", r.samples},
         {"naive_realtime_factor", r.naive_realtime_factor},
         {"queued_realtime_factor", r.queued_realtime_factor},
         {"queued_samples_per_second", r.queued_samples_per_second},
         {"speedup", r.speedup},
         {"max_abs_diff", r.max_abs_diff}};
  // The bench report is JSON by definition.
  std::cout << j.dump(g.json ? -1 : 2) << "\n";
  return 0;
}

// ---- verify ----------------------------------------------------------------

int cmd_verify(const Globals& g, const std::string& level) {
  const auto results = verify::run_suite(level, g.seed);
  bool ok = true;
  json rows = json::array();
  std::string text;
  for (const auto& r : results) {
    ok = ok && r.passed;
    rows.push_back(json{{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
    char line[256];
    std::snprintf(line, sizeof line, "%-4s  %-58s %s (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                  r.detail.c_str(), r.seconds);
    text += line;
  }
  text += ok ? "all checks passed\n" : "some checks FAILED\n";
  emit(g, json{{"level", level}, {"passed", ok}, {"checks", rows}}, text);
  return ok ? 0 : 2;
}

// ---- mel -------------------------------------------------------------------

int cmd_mel(const Globals& g, const std::string& wav_path, const std::string& out) {
  const MelConfig cfg;
  const auto mel = mel_spectrogram(wav::read(wav_path), cfg);
  if (!out.empty()) io::save_mel(out, mel, cfg);
  double lo = 1e300, hi = -1e300;
  for (double v : mel.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  emit(g, json{{"frames", mel.n_frames}, {"n_mels", mel.n_mels}, {"min", lo}, {"max", hi}, {"out", out}},
       std::to_string(mel.n_frames) + " frames x " + std::to_string(mel.n_mels) + " mels, range [" + fmt("%.3f", lo) +
           ", " + fmt("%.3f", hi) + "]" + (out.empty() ? "" : ", cached at " + out) + "\n");
  return 0;
}

// ---- toy data --------------------------------------------------------------

int cmd_toy(const Globals& g, const std::string& out_dir, std::size_t count, double seconds) {
  fs::create_directories(out_dir);
  std::mt19937_64 rng(g.seed);
  std::vector<io::ManifestEntry> entries;
  const std::uint32_t sr = 22050;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t k = 0; k < count; ++k) {
    const std::string name = "toy_" + std::to_string(k) + ".wav";
    wav::write((fs::path(out_dir) / name).string(), toy_sine_mixture(n, sr, rng));
    entries.push_back({name, static_cast<double>(n) / sr});
  }
  const auto manifest = (fs::path(out_dir) / "manifest.ndjson").string();
  io::write_manifest(manifest, entries);
  emit(g, json{{"manifest", manifest}, {"utterances", count}},
       "wrote " + std::to_string(count) + " utterances and " + manifest + "\n");
  return 0;
}

template <class F>
int dispatch(const Globals& g, F&& f) {
  if (g.precision == "fp64") return f(double{});
  return f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WaveFlow engine: flow-based raw waveform model (likelihood, training, synthesis)"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed; every command is deterministic under a fixed seed")->capture_default_str();
  app.add_option("--precision", g.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"fp32", "fp64"}))
      ->capture_default_str();
  app.add_flag("--json", g.json, "Structured JSON output on stdout");
  app.add_option("--threads", g.threads, "Worker threads (training batch items)")->check(CLI::PositiveNumber)->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Maximum-likelihood training with Adam");
  train->add_option("--config", ta.config, "Preset name or config JSON path")->capture_default_str();
  train->add_option("--data-manifest", ta.manifest, "NDJSON manifest of {path, duration}")->required();
  train->add_option("--out-dir", ta.out_dir, "Checkpoints and metrics.ndjson go here")->capture_default_str();
  train->add_option("--steps", ta.steps, "Training steps")->capture_default_str();
  train->add_option("--lr", ta.lr, "Constant Adam learning rate")->capture_default_str();
  train->add_option("--batch", ta.batch, "Batch size")->capture_default_str();
  train->add_option("--clip", ta.clip, "Clip length in samples")->capture_default_str();
  train->add_option("--checkpoint-interval", ta.interval, "Steps between checkpoints (0: only at the end)")
      ->capture_default_str();
  train->add_option("--max-grad-norm", ta.max_grad_norm, "Clip gradients to this L2 norm (0: off)")
      ->capture_default_str();

  std::string init_config = "desk", init_out = "model";
  auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  init->add_option("--config", init_config, "Preset name or config JSON path")->capture_default_str();
  init->add_option("--out", init_out, "Checkpoint prefix")->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate audio from Gaussian latents");
  synth->add_option("--checkpoint", sa.checkpoint, "Checkpoint prefix")->required();
  auto* mel_opt = synth->add_option("--mel", sa.mel, "Cached mel spectrogram prefix");
  synth->add_option("--wav-for-mel", sa.wav_for_mel, "Compute the conditioner from this WAV")->excludes(mel_opt);
  synth->add_option("--samples", sa.samples, "Output length for unconditioned models")->capture_default_str();
  synth->add_option("--std", sa.stddev, "Latent standard deviation (0 gives a deterministic output)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--out", sa.out, "Output WAV path")->capture_default_str();
  synth->add_option("--engine", sa.engine, "naive: full recompute per row; queued: convolution queues; both: compare")
      ->check(CLI::IsMember({"naive", "queued", "both"}))
      ->capture_default_str();

  std::string ll_ck, ll_wav;
  auto* loglik = app.add_subcommand("loglik", "Exact log-likelihood of a WAV file");
  loglik->add_option("--checkpoint", ll_ck, "Checkpoint prefix")->required();
  loglik->add_option("--wav", ll_wav, "Input WAV")->required();

  BenchArgs ba;
  auto* benchc = app.add_subcommand("bench", "Time queued against naive synthesis");
  benchc->add_option("--checkpoint", ba.checkpoint, "Checkpoint prefix (default: freshly initialized --config)");
  benchc->add_option("--config", ba.config, "Preset name or config JSON path")->capture_default_str();
  benchc->add_option("--width", ba.width, "Grid width (samples = h * width)")->check(CLI::PositiveNumber)->capture_default_str();
  benchc->add_option("--repeats", ba.repeats, "Timing repeats (best is reported)")->check(CLI::PositiveNumber)->capture_default_str();
  benchc->add_flag("--no-naive", ba.no_naive, "Skip the naive path");

  std::string level = "fast";
  auto* verifyc = app.add_subcommand("verify", "Run the invariant suites and print a pass/fail table");
  verifyc->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}))->capture_default_str();

  std::string mel_wav, mel_out;
  auto* melc = app.add_subcommand("mel", "Compute (and optionally cache) an 80-band log-mel spectrogram");
  melc->add_option("--wav", mel_wav, "Input WAV")->required();
  melc->add_option("--out", mel_out, "Cache prefix (tensor archive)");

  std::string toy_dir = "toy";
  std::size_t toy_count = 16;
  double toy_seconds = 1.0;
  auto* toy = app.add_subcommand("toy-data", "Write a sine-mixture dataset and its manifest");
  toy->add_option("--out-dir", toy_dir, "Output directory")->capture_default_str();
  toy->add_option("--count", toy_count, "Number of utterances")->check(CLI::PositiveNumber)->capture_default_str();
  toy->add_option("--seconds", toy_seconds, "Utterance length")->check(CLI::PositiveNumber)->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*train) return dispatch(g, [&](auto t) { return cmd_train<decltype(t)>(g, ta); });
    if (*init) return cmd_init(g, init_config, init_out);
    if (*synth) return dispatch(g, [&](auto t) { return cmd_synth<decltype(t)>(g, sa); });
    if (*loglik) return dispatch(g, [&](auto t) { return cmd_loglik<decltype(t)>(g, ll_ck, ll_wav); });
    if (*benchc) return dispatch(g, [&](auto t) { return cmd_bench<decltype(t)>(g, ba); });
    if (*verifyc) return cmd_verify(g, level);
    if (*melc) return cmd_mel(g, mel_wav, mel_out);
    if (*toy) return cmd_toy(g, toy_dir, toy_count, toy_seconds);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
