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

#include <numbers>

#include "support.hpp"

using namespace wft;
namespace ref = waveflow::reference;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Flow whose output projection is a pure bias: mu = shift, log sigma = ls.
FlowNet<double> constant_flow(std::size_t h, double shift, double ls) {
  auto m = WaveFlowModel<double>::init(small_config(h, 1), 1);
  m.params.at("flow0.end.b")[0] = shift;
  m.params.at("flow0.end.b")[1] = ls;
  return m.stack().flows[0];
}

}  // namespace

// ---- single flow ----------------------------------------------------------

TEST(FlowInverse, IdentityInitialized) {
  const auto net = WaveFlowModel<double>::init(small_config(4, 1), 3).stack().flows[0];
  Gen gen(1);
  const auto x = gen.grid<double>(4, 6);
  const auto r = flow_inverse(x, nullptr, net);
  EXPECT_EQ(r.z.values, x.values);
  EXPECT_EQ(r.logdet, 0.0);
}

TEST(FlowInverse, ConstantScaleTwo) {
  const auto net = constant_flow(4, 0.0, std::log(2.0));
  Gen gen(2);
  const auto x = gen.grid<double>(4, 5);
  const auto r = flow_inverse(x, nullptr, net);
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(r.z.values[k], 2.0 * x.values[k], 1e-15);
  EXPECT_NEAR(r.logdet, 20 * std::log(2.0), 1e-12);
}

TEST(FlowInverse, LogDetMatchesBruteForceJacobian) {
  const std::size_t h = 4, w = 6;
  Gen gen(3);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto net = random_model<double>(small_config(h, 1), seed, 0.2).stack().flows[0];
    const auto x = gen.grid<double>(h, w);
    const double analytic = flow_inverse(x, nullptr, net).logdet;
    const auto J = fd_jacobian([&](const auto& v) { return flat(flow_inverse(grid_of<double>(v, h, w), nullptr, net).z); },
                               flat(x));
    const double brute = log_abs_det(J);
    EXPECT_NEAR(analytic, brute, 1e-5 * std::max(1.0, std::abs(brute)));
    EXPECT_GT(std::abs(analytic), 1e-3);  // not the trivial identity case
  }
}

TEST(FlowInverse, JacobianIsLowerTriangularWithScaleDiagonal) {
  const std::size_t h = 5, w = 4;
  const auto net = random_model<double>(small_config(h, 1, 3, 4), 7, 0.2).stack().flows[0];
  Gen gen(4);
  const auto x = gen.grid<double>(h, w);
  const auto r = flow_inverse(x, nullptr, net);
  const auto J = fd_jacobian([&](const auto& v) { return flat(flow_inverse(grid_of<double>(v, h, w), nullptr, net).z); },
                             flat(x));
  for (Eigen::Index a = 0; a < J.rows(); ++a)
    for (Eigen::Index b = a + 1; b < J.cols(); ++b) ASSERT_LE(std::abs(J(a, b)), 1e-8);
  for (Eigen::Index a = 0; a < J.rows(); ++a)
    EXPECT_NEAR(J(a, a), std::exp(r.log_scale.values[static_cast<std::size_t>(a)]), 1e-7);
}

TEST(FlowForward, IdentityInitialized) {
  const auto net = WaveFlowModel<double>::init(small_config(4, 1), 3).stack().flows[0];
  Gen gen(5);
  const auto z = gen.grid<double>(4, 6);
  EXPECT_EQ(flow_forward(z, nullptr, net).values, z.values);
}

TEST(FlowForward, RoundTripFp32AndRowSteps) {
  const auto net = random_model<float>(small_config(16, 1, 4, 8), 11, 0.1).stack().flows[0];
  Gen gen(6);
  const auto x = gen.grid<float>(16, 64);
  SynthStats st;
  const auto back = flow_forward(flow_inverse(x, nullptr, net).z, nullptr, net, &st);
  EXPECT_LE(max_abs(back.values, x.values), 1e-4);
  EXPECT_EQ(st.row_steps, 16u);
}

TEST(FlowForward, ScaleFloorIsTallied) {
  const auto net = constant_flow(3, 0.0, -10.0);
  WaveGrid<double> z(3, 4, 1.0);
  SynthStats st;
  const auto x = flow_forward(z, nullptr, net, &st);
  EXPECT_EQ(st.floored, 12u);
  EXPECT_NEAR(x(0, 0), std::exp(7.0), 1e-9);
}

TEST(FlowForward, NonFiniteReportsLocation) {
  const auto net = random_model<double>(small_config(4, 1), 2, 0.2).stack().flows[0];
  WaveGrid<double> z(4, 3, 0.0);
  z(0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    flow_forward(z, nullptr, net);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("row"), std::string::npos);
  }
  WaveGrid<double> x(4, 3, 0.0);
  x(1, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(flow_inverse(x, nullptr, net), NumericalError);
}

// ---- stacks -----------------------------------------------------------------

TEST(Stack, BaseTermOnlyForZeros) {
  const auto fs = WaveFlowModel<double>::init(small_config(2, 1), 1).stack();
  Waveform x;
  x.samples.assign(4, 0.0);
  const auto r = stack_inverse(x, nullptr, fs);
  EXPECT_NEAR(r.report.total_loglik, -4 * kHalfLog2Pi, 1e-12);
  EXPECT_NEAR(r.report.total_loglik, -3.67575, 1e-5);
  EXPECT_EQ(r.report.dims, 4u);
}

TEST(Stack, IdentityModelClosedForm) {
  const auto fs = WaveFlowModel<double>::init(small_config(8, 4), 5).stack();
  Gen gen(9);
  Waveform x;
  x.samples = gen.signal(256, 0.3);
  double ms = 0.0;
  for (double v : x.samples) ms += v * v;
  ms /= 256;
  const auto r = stack_inverse(x, nullptr, fs);
  EXPECT_NEAR(r.report.per_dim_loglik, -kHalfLog2Pi - ms / 2, 1e-12);
}

TEST(Stack, DecompositionIsExact) {
  Gen gen(10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto fs = random_model<double>(small_config(4, 3), seed).stack();
    Waveform x;
    x.samples = gen.signal(4 * gen.size(1, 9));
    const auto& rep = stack_inverse(x, nullptr, fs).report;
    ASSERT_EQ(rep.total_loglik, rep.logdet_sum + rep.base_term);
    ASSERT_EQ(rep.per_dim_loglik, rep.total_loglik / static_cast<double>(rep.dims));
  }
}

TEST(Stack, StrategyBForEightFlows) {
  const auto p = flow_permutations(8, 16, "auto");
  ASSERT_EQ(p.size(), 8u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p[k].row_map, Permutation::reverse(16).row_map);
  for (std::size_t k = 4; k < 8; ++k) EXPECT_EQ(p[k].row_map, Permutation::bipartite_reverse(16).row_map);
  for (const auto& q : flow_permutations(1, 8, "auto")) EXPECT_EQ(q.row_map, Permutation::identity(8).row_map);
  for (const auto& q : flow_permutations(4, 8, "auto")) EXPECT_EQ(q.row_map, Permutation::reverse(8).row_map);
}

TEST(Stack, TwoFlowLogDetMatchesComposedJacobian) {
  const std::size_t h = 4, w = 4;
  const auto fs = random_model<double>(small_config(h, 2), 21, 0.2).stack();
  Gen gen(11);
  const auto x = gen.grid<double>(h, w);
  const auto r = stack_inverse_grid(x, {}, fs);
  const auto J = fd_jacobian([&](const auto& v) { return flat(stack_inverse_grid(grid_of<double>(v, h, w), {}, fs).z0); },
                             flat(x));
  EXPECT_NEAR(r.report.logdet_sum, log_abs_det(J), 1e-4);
  // Per-flow pieces compose additively.
  double per_flow = 0.0;
  WaveGrid<double> cur = x;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    const auto fk = flow_inverse(cur, nullptr, fs.flows[k]);
    per_flow += fk.logdet;
    cur = permute_rows(fk.z, fs.permutations[k]);
  }
  EXPECT_NEAR(per_flow, r.report.logdet_sum, 1e-12);
  EXPECT_EQ(cur.values, r.z0.values);
}

TEST(Stack, EightFlowRoundTripFp32) {
  const auto fs = random_model<float>(small_config(16, 8, 2, 4), 4, 0.1).stack();
  Gen gen(12);
  Waveform x;
  x.samples = gen.signal(16 * 24, 0.4);
  const auto inv = stack_inverse(x, nullptr, fs);
  SynthStats st;
  const auto back = stack_forward(inv.z0, nullptr, fs, &st);
  EXPECT_LE(max_abs(back.samples, x.samples), 1e-3);
  EXPECT_EQ(st.row_steps, 128u);
}

TEST(Stack, SingleIdentityFlowForwardIsUnsqueeze) {
  const auto fs = WaveFlowModel<double>::init(small_config(4, 1), 1).stack();
  Gen gen(13);
  const auto z = gen.grid<double>(4, 5);
  EXPECT_EQ(stack_forward(z, nullptr, fs).samples, unsqueeze(z).samples);
}

TEST(Stack, PaddingAndTrim) {
  const auto fs = random_model<double>(small_config(4, 2), 3).stack();
  Gen gen(14);
  Waveform x;
  x.samples = gen.signal(10);
  const auto r = stack_inverse(x, nullptr, fs);
  EXPECT_EQ(r.pad_count, 2u);
  EXPECT_EQ(r.z0.w, 3u);
  const auto back = stack_forward(r.z0, nullptr, fs, nullptr, r.pad_count);
  ASSERT_EQ(back.size(), 10u);
  EXPECT_LE(max_abs(back.samples, x.samples), 1e-9);
}

TEST(Stack, PropertyInvertibilityAcrossShapes) {
  Gen gen(15);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t h = gen.size(1, 9), flows = gen.size(1, 5);
    const auto fs = random_model<double>(small_config(h, flows, gen.size(1, 3), gen.size(1, 5)), trial).stack();
    const auto x = gen.grid<double>(h, gen.size(1, 7));
    const auto back = stack_forward_grid(stack_inverse_grid(x, {}, fs).z0, {}, fs);
    ASSERT_LE(max_abs(back.values, x.values), 1e-9) << "h=" << h << " flows=" << flows;
  }
}

// ---- reference transforms -------------------------------------------------

TEST(AfReference, UnitScaleZeroShiftIsIdentity) {
  const std::vector<double> x{0.3, -1.0, 2.0, 0.5};
  const auto r = ref::af_inverse(x, [](std::span<const double>, std::size_t) { return ref::Affine{0.0, 0.0}; });
  EXPECT_EQ(r.z, x);
  EXPECT_EQ(r.logdet, 0.0);
}

TEST(AfReference, HandEvaluatedLinearShift) {
  const std::vector<double> x{1.0, 2.0, -3.0, 4.0};
  auto f = [](std::span<const double> p, std::size_t t) { return ref::Affine{t ? 0.5 * p[t - 1] : 0.0, 0.0}; };
  const auto r = ref::af_inverse(x, f);
  EXPECT_EQ(r.z, (std::vector<double>{1.0, 2.0 + 0.5, -3.0 + 1.0, 4.0 - 1.5}));
  EXPECT_EQ(ref::af_forward(r.z, f), x);
}

TEST(AfReference, WaveFlowWithFullHeightMatches) {
  const std::size_t n = 8;
  ModelConfig c = small_config(n, 1, 3, 4);
  c.kernel_w = 1;
  c.dilations_h = {1, 2, 4};
  c.dilations_w = {1, 1, 1};
  Gen gen(16);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto net = random_model<double>(c, seed, 0.3).stack().flows[0];
    ref::Sequence1dNet seq(net.shape, net.weights, ref::Sequence1dNet::Mode::Causal);
    const auto x = gen.grid<double>(n, 1);
    const auto wf = flow_inverse(x, nullptr, net);
    const auto af = ref::af_inverse(x.values, seq.af_conditional());
    EXPECT_LE(max_abs(af.z, flat(wf.z)), 1e-12);
    EXPECT_NEAR(af.logdet, wf.logdet, 1e-12);
    // And in the sampling direction.
    EXPECT_LE(max_abs(ref::af_forward(af.z, seq.af_conditional()), flat(flow_forward(wf.z, nullptr, net))), 1e-12);
  }
}

TEST(BipartiteReference, UnitScaleZeroShiftIsIdentity) {
  const std::vector<double> a{1, 2}, b{3, 4};
  const auto r = ref::bipartite_inverse(a, b, [](std::span<const double>) { return std::vector<ref::Affine>(2); });
  EXPECT_EQ(r.a, a);
  EXPECT_EQ(r.b, b);
}

TEST(BipartiteReference, WaveFlowWithHeightTwoMatches) {
  const std::size_t w = 8;
  ModelConfig c = small_config(2, 1, 3, 4);
  c.kernel_h = 1;
  Gen gen(17);
  auto m = random_model<double>(c, 5, 0.3);
  // With every bias zero the shifted (all-zero) first row yields mu = 0 and
  // log sigma = 0, so row 0 passes through exactly as in the reference.
  for (auto& [name, t] : m.params)
    if (name.ends_with(".b")) t.fill(0.0);
  const auto net = m.stack().flows[0];
  ref::Sequence1dNet seq(net.shape, net.weights, ref::Sequence1dNet::Mode::Centered);
  const auto x = gen.grid<double>(2, w);
  const std::vector<double> xa(x.row(0).begin(), x.row(0).end()), xb(x.row(1).begin(), x.row(1).end());
  const auto wf = flow_inverse(x, nullptr, net);
  const auto bp = ref::bipartite_inverse(xa, xb, seq.bipartite_conditional());
  std::vector<double> za(wf.z.row(0).begin(), wf.z.row(0).end()), zb(wf.z.row(1).begin(), wf.z.row(1).end());
  EXPECT_LE(max_abs(bp.a, za), 1e-12);
  EXPECT_LE(max_abs(bp.b, zb), 1e-12);
  EXPECT_NEAR(bp.logdet, wf.logdet, 1e-12);
}

namespace {

// Generic nonlinear conditionals over a length-6 sequence split 3 | 3.
std::vector<ref::Affine> bipartite_params(std::span<const double> xa) {
  std::vector<ref::Affine> p(3);
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0.1 * static_cast<double>(k);
    for (std::size_t m = 0; m < xa.size(); ++m) s += std::sin(1.0 + static_cast<double>(k + 2 * m)) * xa[m];
    p[k] = {std::tanh(s), 0.3 * std::tanh(0.7 * s + 0.2)};
  }
  return p;
}

ref::Affine af_params(std::span<const double> prefix, std::size_t t) {
  double s = 0.05 * static_cast<double>(t);
  for (std::size_t m = 0; m < prefix.size(); ++m) s += std::cos(static_cast<double>(3 * t + m)) * prefix[m];
  return {std::tanh(s), 0.3 * std::tanh(s - 0.1)};
}

}  // namespace

TEST(Reduction, AutoregressiveWithFixedFirstHalfIsBipartite) {
  Gen gen(18);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = gen.signal(6);
    const std::vector<double> xa(x.begin(), x.begin() + 3), xb(x.begin() + 3, x.end());
    // (mu, sigma) = (0, 1) for t in a; for t in b use the bipartite
    // conditional on the a part of the prefix.
    auto f = [](std::span<const double> prefix, std::size_t t) {
      if (t < 3) return ref::Affine{0.0, 0.0};
      return bipartite_params(prefix.first(3))[t - 3];
    };
    const auto af = ref::af_inverse(x, f);
    const auto bp = ref::bipartite_inverse(xa, xb, bipartite_params);
    for (std::size_t k = 0; k < 3; ++k) {
      ASSERT_EQ(af.z[k], bp.a[k]);
      ASSERT_EQ(af.z[3 + k], bp.b[k]);
    }
    ASSERT_EQ(af.logdet, bp.logdet);
  }
}

TEST(Reduction, BipartiteDependenciesAreAStrictSubsetOfAutoregressive) {
  Gen gen(19);
  const auto x = gen.signal(6);
  const auto Jaf = fd_jacobian([](const auto& v) { return ref::af_inverse(v, af_params).z; }, x);
  const auto Jbp = fd_jacobian(
      [](const auto& v) {
        const auto r = ref::bipartite_inverse({v.begin(), v.begin() + 3}, {v.begin() + 3, v.end()}, bipartite_params);
        std::vector<double> out = r.a;
        out.insert(out.end(), r.b.begin(), r.b.end());
        return out;
      },
      x);
  std::size_t n_af = 0, n_bp = 0;
  for (Eigen::Index r = 0; r < 6; ++r)
    for (Eigen::Index c = 0; c < 6; ++c) {
      const bool af = std::abs(Jaf(r, c)) > 1e-9, bp = std::abs(Jbp(r, c)) > 1e-9;
      n_af += af;
      n_bp += bp;
      ASSERT_TRUE(!bp || af) << "bipartite entry (" << r << "," << c << ") outside the autoregressive pattern";
    }
  EXPECT_LT(n_bp, n_af);
  EXPECT_EQ(n_af, 21u);      // full lower triangle
  EXPECT_EQ(n_bp, 3u + 12u);  // diagonal of a, then b sees all of a plus itself
}
