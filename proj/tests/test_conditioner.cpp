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

#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "support.hpp"

using namespace wft;

namespace {

Waveform sine(double hz, std::size_t n, double amp = 0.5) {
  Waveform x;
  x.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) x.samples[t] = amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(t) / x.sample_rate);
  return x;
}

Upsampler<double> default_upsampler() {
  ModelConfig c = small_config(8, 1);
  c.conditioned = true;
  return *WaveFlowModel<double>::init(c, 1).stack().upsampler;
}

MelSpectrogram ramp_mel(std::size_t frames, std::size_t bands) {
  MelSpectrogram m{frames, bands, std::vector<double>(frames * bands)};
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < bands; ++b) m.values[t * bands + b] = static_cast<double>(t + 1) + 0.01 * static_cast<double>(b);
  return m;
}

}  // namespace

TEST(Mel, FrameCount) {
  EXPECT_EQ(mel_spectrogram(sine(440, 16384)).n_frames, 64u);
  EXPECT_EQ(mel_spectrogram(sine(440, 16385)).n_frames, 65u);
  EXPECT_EQ(mel_spectrogram(sine(440, 16384)).n_mels, 80u);
}

TEST(Mel, SilenceHitsTheFloor) {
  Waveform x;
  x.samples.assign(4096, 0.0);
  const auto m = mel_spectrogram(x);
  for (double v : m.values) ASSERT_EQ(v, std::log(1e-5));
}

TEST(Mel, SineArgmaxIsStableAndMatchesDirectDft) {
  const auto x = sine(440, 8192);
  const auto m = mel_spectrogram(x);
  auto argmax = [&](std::size_t t) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < m.n_mels; ++b)
      if (m(t, b) > m(t, best)) best = b;
    return best;
  };
  const std::size_t band = argmax(m.n_frames / 2);
  for (std::size_t t = 2; t + 2 < m.n_frames; ++t) ASSERT_EQ(argmax(t), band) << "frame " << t;

  // Direct O(N^2) DFT of one Hann-windowed frame locates the spectral peak.
  const std::size_t N = 1024, start = 2048;
  std::size_t peak = 0;
  double peak_mag = 0.0;
  for (std::size_t k = 0; k <= N / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double win = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * static_cast<double>(n) / N);
      acc += win * x.samples[start + n] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * n) / N);
    }
    if (std::abs(acc) > peak_mag) peak_mag = std::abs(acc), peak = k;
  }
  const double f = static_cast<double>(peak) * 22050.0 / N;
  EXPECT_NEAR(f, 440.0, 22050.0 / N);
  // HTK mel points; the winning filter's support must contain the peak.
  auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
  const double top = to_mel(22050.0 / 2);
  const double lo = to_hz(top * static_cast<double>(band) / 81), hi = to_hz(top * static_cast<double>(band + 2) / 81);
  EXPECT_LT(lo, f);
  EXPECT_GT(hi, f);
}

TEST(Mel, RejectsShortInput) {
  Waveform x;
  x.samples.assign(100, 0.0);
  EXPECT_THROW(mel_spectrogram(x), ValidationError);
}

TEST(Upsample, FactorIsExactly256) {
  const auto up = default_upsampler();
  for (std::size_t frames : {1u, 2u, 4u, 7u, 33u}) {
    const auto out = upsample(ramp_mel(frames, 80), up);
    ASSERT_EQ(out.shape(), (Shape{1, frames * 256, 80}));
  }
  EXPECT_EQ(upsample(ramp_mel(4, 80), up).dim(1), 1024u);
}

TEST(Upsample, HoldKernelRepeatsEachFrame) {
  const auto up = default_upsampler();
  const auto mel = ramp_mel(5, 80);
  const auto out = upsample(mel, up);
  for (std::size_t t = 0; t < 5 * 256; ++t)
    for (std::size_t b = 0; b < 80; ++b) ASSERT_NEAR(out[t * 80 + b], mel(t / 256, b), 1e-12) << t << "," << b;
}

TEST(Upsample, NegativeInputsPassTheLeakySlopeTwice) {
  const auto up = default_upsampler();
  MelSpectrogram mel{2, 80, std::vector<double>(160, -2.0)};
  const auto out = upsample(mel, up);
  for (double v : out.storage()) ASSERT_NEAR(v, -2.0 * 0.4 * 0.4, 1e-12);
}

TEST(Upsample, ZeroWeightsGiveZeroFeatures) {
  auto up = default_upsampler();
  for (auto& L : up.weights.layers) {
    L.w.fill(0.0);
    L.b.fill(0.0);
  }
  const auto out = upsample(ramp_mel(3, 80), up);
  for (double v : out.storage()) ASSERT_EQ(v, 0.0);
}

TEST(ConditionerGrid, ColumnMajorLayout) {
  Tensor<double> feat({1, 6, 80});
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t b = 0; b < 80; ++b) feat[t * 80 + b] = static_cast<double>(100 * b + t);
  const auto grids = build_conditioner_grids(feat, 2, 3, {Permutation::identity(2)});
  ASSERT_EQ(grids.size(), 1u);
  ASSERT_EQ(grids[0].shape(), (Shape{80, 2, 3}));
  for (std::size_t b = 0; b < 80; ++b)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) ASSERT_EQ(grids[0].at(b, i, j), static_cast<double>(100 * b + j * 2 + i));
}

TEST(ConditionerGrid, FollowsTheLatentPermutations) {
  Gen gen(3);
  const std::size_t h = 8, w = 4;
  const auto feat = gen.tensor<double>({1, h * w, 80});
  const auto perms = flow_permutations(8, h, "b");
  const auto grids = build_conditioner_grids(feat, h, w, perms);
  // Channel by channel, grid k equals channel 0 carried through the same
  // WaveGrid row permutations the latents go through.
  for (std::size_t b : {0u, 17u, 79u}) {
    WaveGrid<double> g(h, w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) g(i, j) = grids[0].at(b, i, j);
    for (std::size_t k = 0; k < perms.size(); ++k) {
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) ASSERT_EQ(grids[k].at(b, i, j), g(i, j)) << "flow " << k;
      g = permute_rows(g, perms[k]);
    }
  }
  // Flow 1 after a reverse: rows exactly reversed.
  for (std::size_t i = 0; i < h; ++i) EXPECT_EQ(grids[1].at(5, i, 2), grids[0].at(5, h - 1 - i, 2));
}

TEST(ConditionerGrid, TailBeyondGridIsDropped) {
  Gen gen(4);
  const auto feat = gen.tensor<double>({1, 4 * 3 + 5, 80});
  const auto g = build_conditioner_grids(feat, 4, 3, {Permutation::identity(4)})[0];
  for (std::size_t b = 0; b < 80; ++b)
    for (std::size_t t = 0; t < 12; ++t) ASSERT_EQ(g.at(b, t % 4, t / 4), feat[t * 80 + b]);
  EXPECT_THROW(build_conditioner_grids(feat, 4, 5, {Permutation::identity(4)}), ValidationError);
}

TEST(ConditionerGrid, AlignedWithSampleIndexThroughHoldUpsampler) {
  ModelConfig c = small_config(16, 3);
  c.conditioned = true;
  const auto fs = WaveFlowModel<double>::init(c, 2).stack();
  const auto mel = ramp_mel(3, 80);
  // Padded waveform of 40 columns * 16 rows = 640 samples < 768 covered.
  const std::size_t w = 40;
  const auto grids = stack_conditioners(fs, &mel, w);
  // Grid 0 is unpermuted: position (i, j) is sample j*h+i, frame (j*h+i)/256.
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < w; ++j) ASSERT_NEAR(grids[0].at(0, i, j), mel((j * 16 + i) / 256, 0), 1e-12);
}

TEST(ConditionerGrid, LengthMismatchIsRejected) {
  ModelConfig c = small_config(16, 1);
  c.conditioned = true;
  const auto fs = WaveFlowModel<double>::init(c, 2).stack();
  const auto mel = ramp_mel(2, 80);  // 512 samples
  EXPECT_THROW(stack_conditioners(fs, &mel, 33), ValidationError);
  EXPECT_THROW(stack_conditioners(fs, nullptr, 4), ValidationError);
  const MelSpectrogram narrow{2, 40, std::vector<double>(80)};
  EXPECT_THROW(stack_conditioners(fs, &narrow, 4), ValidationError);
}
