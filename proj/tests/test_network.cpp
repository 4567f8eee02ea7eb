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

#include "support.hpp"

using namespace wft;

namespace {

using Dil = std::vector<std::size_t>;

FlowNet<double> probe_net(std::size_t h, const Dil& dh, const Dil& dw, std::size_t kh = 3, std::size_t kw = 3) {
  ModelConfig c = small_config(h, 1, dh.size(), 2);
  c.dilations_h = dh;
  c.dilations_w = dw;
  c.kernel_h = kh;
  c.kernel_w = kw;
  auto m = random_model<double>(c, 41, 0.3);
  // Unit-scale filters keep the product of the outermost taps across all
  // layers far above rounding, so exact comparisons see the full extent.
  for (auto& [name, t] : m.params)
    if (name.ends_with(".g")) t.fill(2.0);
  return m.stack().flows[0];
}

// Last output row touched by a unit change of input row 0.
std::size_t last_affected_row(const FlowNet<double>& net, std::size_t h, std::size_t w) {
  WaveGrid<double> x(h, w, 0.0);
  const auto base = net_forward(x, nullptr, net);
  for (std::size_t j = 0; j < w; ++j) x(0, j) += 1.0;
  const auto moved = net_forward(x, nullptr, net);
  std::size_t last = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      if (moved.shift(i, j) != base.shift(i, j) || moved.log_scale(i, j) != base.log_scale(i, j)) last = std::max(last, i);
  return last;
}

}  // namespace

TEST(ReceptiveField, TableValues) {
  EXPECT_EQ(receptive_field(3, Dil(8, 1)), 17u);
  EXPECT_EQ(receptive_field(3, {1, 2, 4, 1, 2, 4, 1, 2}), 35u);
  EXPECT_EQ(receptive_field(3, {1, 2, 4, 8, 16, 1, 2, 4}), 77u);
}

TEST(ReceptiveField, PropertyMatchesFormula) {
  Gen gen(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = gen.size(1, 5);
    Dil d(gen.size(1, 10));
    std::size_t s = 0;
    for (auto& v : d) s += (v = gen.size(1, 20));
    ASSERT_EQ(receptive_field(k, d), (k - 1) * s + 1);
  }
}

TEST(ReceptiveField, DefaultDilations) {
  EXPECT_EQ(default_dilations(8), Dil(8, 1));
  EXPECT_EQ(default_dilations(16), Dil(8, 1));
  EXPECT_EQ(default_dilations(32), (Dil{1, 2, 4, 1, 2, 4, 1, 2}));
  EXPECT_EQ(default_dilations(64), (Dil{1, 2, 4, 8, 16, 1, 2, 4}));
  EXPECT_EQ(default_dilations(512), (Dil{1, 2, 4, 8, 16, 32, 64, 128}));
}

TEST(ReceptiveField, DefaultDilationsCoverHeight) {
  for (std::size_t h = 2; h <= 511; ++h) {
    const auto c = validate_dilations(h, 3, default_dilations(h));
    ASSERT_TRUE(c.ok) << "h=" << h << ": " << c.message;
  }
  // The capped cycle reaches 511 rows, half a dilation short at h=512.
  const auto c = validate_dilations(512, 3, default_dilations(512));
  EXPECT_FALSE(c.ok);
  EXPECT_DOUBLE_EQ(c.required - static_cast<double>(c.sum), 0.5);
}

TEST(ReceptiveField, ValidateDilations) {
  EXPECT_TRUE(validate_dilations(32, 3, {1, 2, 4, 1, 2, 4, 1, 2}).ok);
  const auto bad = validate_dilations(32, 3, Dil(8, 1));
  EXPECT_FALSE(bad.ok);
  EXPECT_DOUBLE_EQ(bad.required, 15.5);
  EXPECT_NE(bad.message.find("17"), std::string::npos);
  EXPECT_TRUE(validate_dilations(2, 3, Dil(8, 1)).ok);
}

TEST(ReceptiveField, ImpulseProbeAgreesWithTable) {
  for (std::size_t h : {8u, 16u, 32u, 64u}) {
    const auto d = default_dilations(h);
    const std::size_t r = receptive_field(3, d);
    const std::size_t rows = r + 4;
    const auto net = probe_net(rows, d, Dil(d.size(), 1));
    // Shifted input: output row i reads input rows i - r .. i - 1.
    EXPECT_EQ(last_affected_row(net, rows, 2), r) << "h=" << h;
  }
}

TEST(Network, WidthImpulseSpan) {
  const Dil dw{1, 2, 4, 8, 16, 32, 64, 128};
  const std::size_t w = 700, centre = 350;
  const auto net = probe_net(2, Dil(8, 1), dw);
  WaveGrid<double> x(2, w, 0.0);
  const auto base = net_forward(x, nullptr, net);
  x(0, centre) += 1.0;
  const auto moved = net_forward(x, nullptr, net);
  std::size_t lo = w, hi = 0;
  for (std::size_t j = 0; j < w; ++j)
    if (moved.shift(1, j) != base.shift(1, j) || moved.log_scale(1, j) != base.log_scale(1, j)) {
      lo = std::min(lo, j);
      hi = std::max(hi, j);
    }
  std::size_t sum = 0;
  for (auto d : dw) sum += d;
  EXPECT_EQ(hi - lo + 1, 2 * sum + 1);
  EXPECT_EQ(hi - lo + 1, 511u);
}

TEST(Network, ZeroOutputProjectionGivesIdentity) {
  Gen gen(4);
  const auto net = WaveFlowModel<double>::init(small_config(8, 1, 3, 6), 9).stack().flows[0];
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = gen.grid<double>(8, 7, 2.0);
    const auto out = net_forward(x, nullptr, net);
    for (std::size_t k = 0; k < x.size(); ++k) {
      ASSERT_EQ(out.shift.values[k], 0.0);
      ASSERT_EQ(out.log_scale.values[k], 0.0);
    }
  }
}

TEST(Network, HeightCausalityByFiniteDifferences) {
  const std::size_t h = 8, w = 8;
  Gen gen(12);
  for (std::uint64_t seed : {1u, 2u}) {
    auto m = random_model<double>(small_config(h, 1, 3, 4), seed, 0.3);
    const auto net = m.stack().flows[0];
    const auto x = gen.grid<double>(h, w);
    auto f = [&](const std::vector<double>& v) {
      const auto o = net_forward(grid_of<double>(v, h, w), nullptr, net);
      auto out = flat(o.shift);
      out.insert(out.end(), o.log_scale.values.begin(), o.log_scale.values.end());
      return out;
    };
    const auto J = fd_jacobian(f, flat(x));
    double below = 0.0;
    for (std::size_t part = 0; part < 2; ++part)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t i2 = 0; i2 < h; ++i2)
            for (std::size_t j2 = 0; j2 < w; ++j2) {
              const double d = std::abs(J(static_cast<Eigen::Index>(part * h * w + i * w + j), static_cast<Eigen::Index>(i2 * w + j2)));
              if (i2 >= i) ASSERT_LE(d, 1e-9) << "output (" << i << "," << j << ") input (" << i2 << "," << j2 << ")";
              else below = std::max(below, d);
            }
    EXPECT_GT(below, 1e-4);  // the network is not trivially constant
  }
}

TEST(Network, ZeroLayerFiltersDecoupleOutputFromInput) {
  auto m = random_model<double>(small_config(6, 1, 3, 4), 5, 0.3);
  for (std::size_t l = 0; l < 3; ++l) m.params.at(layer_prefix(0, l) + ".conv.g").fill(0.0);
  const auto net = m.stack().flows[0];
  Gen gen(8);
  const auto a = net_forward(gen.grid<double>(6, 5), nullptr, net);
  const auto b = net_forward(gen.grid<double>(6, 5, 3.0), nullptr, net);
  EXPECT_EQ(a.shift.values, b.shift.values);
  EXPECT_EQ(a.log_scale.values, b.log_scale.values);
  // Constant across the grid too: no conditioner to vary it.
  for (std::size_t k = 1; k < a.shift.size(); ++k) ASSERT_DOUBLE_EQ(a.shift.values[k], a.shift.values[0]);
  EXPECT_NE(a.shift.values[0], 0.0);
}

TEST(Network, ConditionerShapeChecked) {
  ModelConfig c = small_config(4, 1);
  c.conditioned = true;
  const auto net = WaveFlowModel<double>::init(c, 1).stack().flows[0];
  WaveGrid<double> x(4, 3);
  EXPECT_THROW(net_forward(x, nullptr, net), ValidationError);
  Tensor<double> wrong({80, 4, 2});
  EXPECT_THROW(net_forward(x, &wrong, net), ValidationError);
  Tensor<double> right({80, 4, 3});
  EXPECT_NO_THROW(net_forward(x, &right, net));
}

TEST(Network, ConditionerIsCausalOverHeight) {
  ModelConfig c = small_config(4, 1, 2, 3);
  c.conditioned = true;
  auto m = random_model<double>(c, 3, 0.3);
  const auto net = m.stack().flows[0];
  Gen gen(6);
  const auto x = gen.grid<double>(4, 5);
  auto cond = gen.tensor<double>({80, 4, 5});
  const auto a = net_forward(x, &cond, net);
  cond[2 * 5 + 4] += 1.0;  // band 0, row 2, column 4
  const auto b = net_forward(x, &cond, net);
  // Later layers convolve the injected bias causally over height, so rows
  // above the perturbed one cannot move.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(a.shift(i, j), b.shift(i, j));
  EXPECT_NE(a.shift(2, 4), b.shift(2, 4));
  EXPECT_NE(a.log_scale(2, 4), b.log_scale(2, 4));
}

TEST(Network, ShapeValidation) {
  NetShape s;
  s.kernel_h = 2;
  EXPECT_THROW(s.validate(), ValidationError);
  s = NetShape{};
  s.dilations_w.pop_back();
  EXPECT_THROW(s.validate(), ValidationError);
  s = NetShape{};
  s.dilations_h[0] = 0;
  EXPECT_THROW(s.validate(), ValidationError);
}
