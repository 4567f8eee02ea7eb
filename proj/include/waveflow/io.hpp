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

// Model configs (JSON, strict), named presets, checkpoints and tensor archives
// (`<prefix>.manifest.json` + `<prefix>.blob` of little-endian f32), and the
// newline-delimited dataset manifest.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "waveflow/conditioner.hpp"
#include "waveflow/errors.hpp"
#include "waveflow/model.hpp"
#include "waveflow/tensor.hpp"

namespace waveflow::io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ValidationError(where + ": unknown field \"" + k + "\"");
}

template <class U>
U get_or(const json& j, const char* key, U fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<U>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config field \"") + key + "\": " + e.what());
  }
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

inline json parse(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

}  // namespace detail

// ---- model config ---------------------------------------------------------

inline json mel_to_json(const MelConfig& m) {
  return json{{"n_mels", m.n_mels}, {"fft_size", m.fft_size}, {"hop", m.hop}, {"window", m.window}, {"floor", m.floor}};
}

inline MelConfig mel_from_json(const json& j) {
  detail::reject_unknown(j, {"n_mels", "fft_size", "hop", "window", "floor"}, "mel");
  MelConfig m;
  m.n_mels = detail::get_or(j, "n_mels", m.n_mels);
  m.fft_size = detail::get_or(j, "fft_size", m.fft_size);
  m.hop = detail::get_or(j, "hop", m.hop);
  m.window = detail::get_or(j, "window", m.window);
  m.floor = detail::get_or(j, "floor", m.floor);
  return m;
}

inline json upsampler_to_json(const UpsamplerShape& u) {
  return json{{"layers", u.layers},
              {"stride", u.stride},
              {"kernel_t", u.kernel_t},
              {"kernel_f", u.kernel_f},
              {"leaky_slope", u.leaky_slope}};
}

inline UpsamplerShape upsampler_from_json(const json& j) {
  detail::reject_unknown(j, {"layers", "stride", "kernel_t", "kernel_f", "leaky_slope"}, "upsampler");
  UpsamplerShape u;
  u.layers = detail::get_or(j, "layers", u.layers);
  u.stride = detail::get_or(j, "stride", u.stride);
  u.kernel_t = detail::get_or(j, "kernel_t", u.kernel_t);
  u.kernel_f = detail::get_or(j, "kernel_f", u.kernel_f);
  u.leaky_slope = detail::get_or(j, "leaky_slope", u.leaky_slope);
  return u;
}

/// Dilations are written resolved so a manifest fully describes the network.
inline json config_to_json(const ModelConfig& c) {
  return json{{"name", c.name},
              {"h", c.h},
              {"n_flows", c.n_flows},
              {"n_layers", c.n_layers},
              {"residual_channels", c.residual_channels},
              {"kernel_h", c.kernel_h},
              {"kernel_w", c.kernel_w},
              {"dilations_h", c.resolved_dilations_h()},
              {"dilations_w", c.resolved_dilations_w()},
              {"permutation", c.permutation},
              {"conditioned", c.conditioned},
              {"mel", mel_to_json(c.mel)},
              {"upsampler", upsampler_to_json(c.upsampler)},
              {"sample_rate", c.sample_rate}};
}

struct LoadedConfig {
  ModelConfig config;
  std::vector<std::string> warnings;
};

/// Strict: unknown fields are rejected; missing fields take defaults.
inline LoadedConfig config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"name", "h", "n_flows", "n_layers", "residual_channels", "kernel_h", "kernel_w",
                          "dilations_h", "dilations_w", "permutation", "conditioned", "mel", "upsampler",
                          "sample_rate"},
                         "config");
  ModelConfig c;
  c.name = detail::get_or(j, "name", c.name);
  // Signed reads so negative values produce a validation error, not a wrap.
  auto count = [&j](const char* key, std::size_t fallback) {
    const long long v = detail::get_or<long long>(j, key, static_cast<long long>(fallback));
    if (v < 0) throw ValidationError(std::string("config: ") + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.h = count("h", c.h);
  c.n_flows = count("n_flows", c.n_flows);
  c.n_layers = count("n_layers", c.n_layers);
  c.residual_channels = count("residual_channels", c.residual_channels);
  c.kernel_h = count("kernel_h", c.kernel_h);
  c.kernel_w = count("kernel_w", c.kernel_w);
  for (const char* key : {"dilations_h", "dilations_w"}) {
    if (!j.contains(key)) continue;
    const auto v = detail::get_or<std::vector<long long>>(j, key, {});
    std::vector<std::size_t> d;
    for (long long x : v) {
      if (x < 1) throw ValidationError(std::string("config: invalid dilation cycle in ") + key + " (entries must be >= 1)");
      d.push_back(static_cast<std::size_t>(x));
    }
    (std::string(key) == "dilations_h" ? c.dilations_h : c.dilations_w) = std::move(d);
  }
  c.permutation = detail::get_or(j, "permutation", c.permutation);
  c.conditioned = detail::get_or(j, "conditioned", c.conditioned);
  if (j.contains("mel")) c.mel = mel_from_json(j.at("mel"));
  if (j.contains("upsampler")) c.upsampler = upsampler_from_json(j.at("upsampler"));
  c.sample_rate = static_cast<std::uint32_t>(count("sample_rate", c.sample_rate));
  auto warnings = c.validate();
  return {std::move(c), std::move(warnings)};
}

/// Standard configurations named by height and channel count, plus a desk preset.
inline const std::map<std::string, ModelConfig>& presets() {
  static const std::map<std::string, ModelConfig> table = [] {
    std::map<std::string, ModelConfig> t;
    auto add = [&t](const std::string& name, std::size_t h, std::size_t channels) {
      ModelConfig c;
      c.name = name;
      c.h = h;
      c.residual_channels = channels;
      t.emplace(name, c);
    };
    add("wf-h8-c64", 8, 64);
    add("wf-h16-c64", 16, 64);
    add("wf-h32-c64", 32, 64);
    add("wf-h64-c64", 64, 64);
    add("wf-h8-c128", 8, 128);
    add("wf-h16-c128", 16, 128);
    add("wf-h32-c128", 32, 128);
    add("wf-h16-c256", 16, 256);
    add("desk", 16, 32);
    return t;
  }();
  return table;
}

inline ModelConfig preset(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) throw ValidationError("unknown preset \"" + name + "\"");
  return it->second;
}

/// Accepts a preset name or a path to a JSON config file.
inline LoadedConfig load_config(const std::string& name_or_path) {
  if (presets().count(name_or_path)) {
    ModelConfig c = preset(name_or_path);
    auto w = c.validate();
    return {c, w};
  }
  return config_from_json(detail::parse(detail::read_text(name_or_path), name_or_path));
}

inline void save_config(const std::string& path, const ModelConfig& c) {
  detail::write_text(path, config_to_json(c).dump(2) + "\n");
}

// ---- tensor archive -------------------------------------------------------

struct TensorEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // bytes into the blob
  std::size_t numel = 0;
};

inline std::string manifest_path(const std::string& prefix) { return prefix + ".manifest.json"; }
inline std::string blob_path(const std::string& prefix) { return prefix + ".blob"; }

namespace detail {

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
}

inline float get_f32(const std::uint8_t* p) {
  const std::uint32_t u =
      std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(u);
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Writes tensors (as f32) and a key-sorted manifest holding `meta` plus the
/// tensor table. Identical inputs produce identical bytes.
template <class T>
void write_archive(const std::string& prefix, json meta, const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  std::vector<std::uint8_t> blob;
  json table = json::array();
  for (const auto& [name, t] : tensors) {
    table.push_back(json{{"name", name}, {"shape", t->shape()}, {"offset", blob.size()}, {"numel", t->size()}});
    for (T v : t->storage()) detail::put_f32(blob, static_cast<float>(v));
  }
  meta["format_version"] = kFormatVersion;
  meta["tensors"] = std::move(table);
  meta["blob_bytes"] = blob.size();
  std::filesystem::path p(prefix);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  {
    std::ofstream out(blob_path(prefix), std::ios::binary);
    if (!out) throw ValidationError("cannot write " + blob_path(prefix));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  }
  detail::write_text(manifest_path(prefix), meta.dump(2) + "\n");
}

struct Archive {
  json manifest;
  std::vector<TensorEntry> entries;
  std::vector<std::uint8_t> blob;

  const TensorEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  /// Decodes one tensor; a blob too short for it is a MissingTensorBytes error.
  template <class T>
  Tensor<T> tensor(const TensorEntry& e) const {
    if (e.offset + 4 * e.numel > blob.size())
      throw CheckpointError(CheckpointError::Kind::MissingTensorBytes,
                            "missing tensor bytes for \"" + e.name + "\": needs " + std::to_string(4 * e.numel) +
                                " bytes at offset " + std::to_string(e.offset) + ", blob has " +
                                std::to_string(blob.size()));
    Tensor<T> t(e.shape);
    for (std::size_t k = 0; k < e.numel; ++k) t[k] = static_cast<T>(detail::get_f32(blob.data() + e.offset + 4 * k));
    return t;
  }
};

inline Archive read_archive(const std::string& prefix) {
  Archive a;
  a.manifest = detail::parse(detail::read_text(manifest_path(prefix)), manifest_path(prefix));
  if (!a.manifest.is_object() || !a.manifest.contains("format_version"))
    throw CheckpointError(CheckpointError::Kind::Malformed, "manifest has no format_version field");
  const int version = a.manifest.at("format_version").get<int>();
  if (version != kFormatVersion)
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kFormatVersion) + ")");
  try {
    for (const auto& t : a.manifest.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.offset = t.at("offset").get<std::size_t>();
      e.numel = t.at("numel").get<std::size_t>();
      if (shape_numel(e.shape) != e.numel)
        throw CheckpointError(CheckpointError::Kind::Malformed, "tensor \"" + e.name + "\": numel disagrees with shape");
      a.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Malformed, std::string("malformed tensor table: ") + e.what());
  }
  a.blob = detail::read_bytes(blob_path(prefix));
  return a;
}

// ---- checkpoints -----------------------------------------------------------

template <class T>
struct Checkpoint {
  WaveFlowModel<T> model;
  std::size_t step = 0;
  std::uint64_t seed = 0;
};

template <class T>
void save_checkpoint(const std::string& prefix, const WaveFlowModel<T>& m, std::size_t step = 0,
                     std::uint64_t seed = 0) {
  std::vector<std::pair<std::string, const Tensor<T>*>> ts;
  for (const auto& [name, t] : m.params) ts.emplace_back(name, &t);
  write_archive(prefix, json{{"kind", "waveflow-checkpoint"}, {"config", config_to_json(m.config)}, {"step", step}, {"seed", seed}},
                ts);
}

/// Rebuilds the architecture from the manifest config and fills every
/// parameter. Errors: version mismatch, missing tensor, missing tensor bytes,
/// shape mismatch, each with its own kind.
template <class T>
Checkpoint<T> load_checkpoint(const std::string& prefix) {
  const Archive a = read_archive(prefix);
  if (!a.manifest.contains("config"))
    throw CheckpointError(CheckpointError::Kind::Malformed, "checkpoint manifest has no config");
  Checkpoint<T> ck;
  ck.model.config = config_from_json(a.manifest.at("config")).config;
  ck.step = a.manifest.value("step", std::size_t{0});
  ck.seed = a.manifest.value("seed", std::uint64_t{0});
  for (const auto& [name, shape] : parameter_shapes(ck.model.config)) {
    const TensorEntry* e = a.find(name);
    if (!e) throw CheckpointError(CheckpointError::Kind::MissingTensor, "missing tensor \"" + name + "\"");
    if (e->shape != shape)
      throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "shape mismatch for \"" + name + "\": checkpoint has " +
                                                                      shape_string(e->shape) + ", config expects " +
                                                                      shape_string(shape));
    ck.model.params.add(name, a.tensor<T>(*e));
  }
  return ck;
}

// ---- mel cache --------------------------------------------------------------

inline void save_mel(const std::string& prefix, const MelSpectrogram& mel, const MelConfig& cfg) {
  const auto t = mel.as_tensor<double>();
  write_archive<double>(prefix, json{{"kind", "mel"}, {"mel", mel_to_json(cfg)}}, {{"mel", &t}});
}

inline MelSpectrogram load_mel(const std::string& prefix) {
  const Archive a = read_archive(prefix);
  const TensorEntry* e = a.find("mel");
  if (!e) throw CheckpointError(CheckpointError::Kind::MissingTensor, "missing tensor \"mel\"");
  if (e->shape.size() != 3 || e->shape[0] != 1)
    throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "mel tensor must be [1, frames, mels]");
  const auto t = a.tensor<double>(*e);
  MelSpectrogram m{e->shape[1], e->shape[2], std::vector<double>(t.storage().begin(), t.storage().end())};
  return m;
}

// ---- dataset manifest ------------------------------------------------------

struct ManifestEntry {
  std::string path;  // absolute, or resolved against the manifest's directory
  double duration = 0.0;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = detail::parse(line, path + ":" + std::to_string(lineno));
    if (!j.is_object() || !j.contains("path"))
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected {\"path\", \"duration\"}");
    ManifestEntry e;
    std::filesystem::path p = j.at("path").get<std::string>();
    e.path = p.is_absolute() ? p.string() : (base / p).string();
    e.duration = j.value("duration", 0.0);
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ValidationError("dataset manifest " + path + " lists no utterances");
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) text += json{{"path", e.path}, {"duration", e.duration}}.dump() + "\n";
  detail::write_text(path, text);
}

}  // namespace waveflow::io
