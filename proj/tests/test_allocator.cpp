/*
 * Copyright (c) 2026 The quantforge Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "test_support.hpp"

#include "quantforge/allocator.hpp"
#include "quantforge/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace quantforge
{
namespace
{

using testing::Rng;

// Exhaustive enumeration: max ΔP, then min ΔL, then lexicographically smaller bits.
Allocation brute_force(const SensitivityTable &t, double budget)
{
  const size_t L = t.layers.size();
  std::vector<size_t> idx(L, 0);
  bool found = false;
  Allocation best;
  std::vector<std::pair<int, int>> best_bits;
  while (true)
  {
    double dl = 0.0, dp = 0.0;
    bool finite = true;
    std::vector<std::pair<int, int>> bits;
    for (size_t l = 0; l < L; ++l)
    {
      const auto &c = t.layers[l].choices[idx[l]];
      dl += c.dloss;
      dp += c.dperf;
      finite = finite && std::isfinite(c.dloss);
      bits.emplace_back(c.weight_bits, c.act_bits);
    }
    if (finite && dl <= budget &&
        (!found || dp > best.dperf || (dp == best.dperf && (dl < best.dloss || (dl == best.dloss && bits < best_bits)))))
    {
      found = true;
      best.dperf = dp;
      best.dloss = dl;
      best_bits = bits;
      best.bits.clear();
      for (size_t l = 0; l < L; ++l)
        best.bits[t.layers[l].id] = {bits[l].first, bits[l].second};
    }
    size_t l = 0;
    while (l < L && ++idx[l] == t.layers[l].choices.size())
      idx[l++] = 0;
    if (l == L)
      break;
  }
  if (!found)
    throw Error("oracle: infeasible");
  return best;
}

SensitivityTable random_table(Rng &rng, bool integral)
{
  std::uniform_int_distribution<int> layers(1, 8), choices(1, 4), small(0, 5);
  std::uniform_real_distribution<double> dl(-0.05, 0.5), dp(0.0, 1e6);
  SensitivityTable t;
  t.base_bits = 8;
  const int L = layers(rng);
  for (int l = 0; l < L; ++l)
  {
    LayerChoices layer{"l" + std::to_string(l), 1000, {{8, 8, 0.0, 0.0}}};
    const int C = choices(rng);
    for (int c = 1; c < C; ++c)
    {
      const int k = 8 - c; // distinct bits per layer
      layer.choices.push_back({k, k, integral ? small(rng) * 0.1 - 0.1 : dl(rng), integral ? small(rng) * 1.0 : dp(rng)});
    }
    t.layers.push_back(layer);
  }
  return t;
}

TEST(SolveIp, MatchesBruteForceOnRandomInstances)
{
  Rng rng(70);
  std::uniform_real_distribution<double> budget(0.0, 1.5);
  for (int trial = 0; trial < 200; ++trial)
  {
    const SensitivityTable t = random_table(rng, false);
    const double b = budget(rng);
    const Allocation got = solve_ip(t, b), want = brute_force(t, b);
    EXPECT_EQ(got.dperf, want.dperf) << "instance " << trial;
    EXPECT_EQ(got.bits, want.bits) << "instance " << trial;
    EXPECT_LE(got.dloss, b);
  }
}

TEST(SolveIp, TieBreaksMatchBruteForce)
{
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial)
  {
    const SensitivityTable t = random_table(rng, true);
    const double b = 0.1 * (trial % 6);
    const Allocation got = solve_ip(t, b), want = brute_force(t, b);
    EXPECT_EQ(got.dperf, want.dperf);
    EXPECT_EQ(got.dloss, want.dloss);
    EXPECT_EQ(got.bits, want.bits);
  }
}

SensitivityTable two_choice_table(const std::vector<int64_t> &params, const std::vector<double> &dloss)
{
  SensitivityTable t;
  for (size_t l = 0; l < params.size(); ++l)
    t.layers.push_back({"l" + std::to_string(l), params[l],
                        {{8, 8, 0.0, 0.0}, {4, 4, dloss[l], 4.0 * static_cast<double>(params[l])}}});
  return t;
}

TEST(SolveIp, ZeroBudgetKeepsBasePrecision)
{
  const auto t = two_choice_table({10, 20, 30}, {0.1, 0.2, 0.05});
  const auto a = solve_ip(t, 0.0);
  for (const auto &[id, bits] : a.bits)
    EXPECT_EQ(bits, (LayerBits{8, 8})) << id;
  EXPECT_EQ(compression_ratio(t, a.bits), 0.25);
}

TEST(SolveIp, SingleLayerChoiceSelectedAtItsCost)
{
  const auto t = two_choice_table({100}, {0.1});
  EXPECT_EQ(solve_ip(t, 0.1).bits.at("l0"), (LayerBits{4, 4}));
  EXPECT_EQ(solve_ip(t, 0.0999).bits.at("l0"), (LayerBits{8, 8}));
}

TEST(SolveIp, InfiniteBudgetTakesMaxGain)
{
  const auto t = two_choice_table({10, 20, 30}, {0.1, 0.2, 0.05});
  const auto a = solve_ip(t, INFINITY);
  for (const auto &[id, bits] : a.bits)
    EXPECT_EQ(bits, (LayerBits{4, 4})) << id;
  EXPECT_EQ(a.dperf, 240.0);
}

TEST(SolveIp, NeverPicksInfiniteLoss)
{
  const auto t = two_choice_table({10, 20}, {INFINITY, 0.1});
  const auto a = solve_ip(t, INFINITY);
  EXPECT_EQ(a.bits.at("l0"), (LayerBits{8, 8}));
  EXPECT_EQ(a.bits.at("l1"), (LayerBits{4, 4}));
}

TEST(SolveIp, AllowedBitsRestrictChoices)
{
  SensitivityTable t;
  t.layers.push_back({"a", 10, {{8, 8, 0, 0}, {4, 4, 0.1, 40}, {2, 2, 0.2, 60}}});
  EXPECT_EQ(solve_ip(t, 1.0).bits.at("a"), (LayerBits{2, 2}));
  EXPECT_EQ(solve_ip(t, 1.0, {4, 8}).bits.at("a"), (LayerBits{4, 4}));
  EXPECT_THROW(solve_ip(t, 1.0, {3}), Error);
  EXPECT_THROW(solve_ip(t, -1.0), Error);
}

TEST(SolveIp, SweepObjectiveIsMonotone)
{
  Rng rng(72);
  for (int trial = 0; trial < 20; ++trial)
  {
    const auto t = random_table(rng, false);
    std::vector<double> budgets;
    for (int i = 0; i <= 20; ++i)
      budgets.push_back(0.1 * i);
    const auto sweep = solve_ip_sweep(t, budgets);
    for (size_t i = 1; i < sweep.size(); ++i)
      EXPECT_LE(sweep[i - 1].allocation.dperf, sweep[i].allocation.dperf);
  }
}

TEST(CompressionRatio, KnownValues)
{
  const auto t = two_choice_table({50, 50}, {0.1, 0.1});
  EXPECT_EQ(compression_ratio(t, {{"l0", {8, 8}}, {"l1", {8, 8}}}), 0.25);
  EXPECT_EQ(compression_ratio(t, {{"l0", {4, 4}}, {"l1", {4, 4}}}), 0.125);
  EXPECT_EQ(compression_ratio(t, {{"l0", {8, 8}}, {"l1", {4, 4}}}), 0.1875);

  Rng rng(73);
  const ModelGraph g = testing::small_resnet(rng);
  EXPECT_EQ(compression_ratio(g, uniform_bits(g, 8)), 0.25);
  EXPECT_EQ(compression_ratio(g, uniform_bits(g, 4)), 0.125);
}

TEST(SolveIpForRatio, ReachesTarget)
{
  const auto t = two_choice_table({10, 20, 30, 40}, {0.3, 0.1, 0.2, 0.4});
  const auto a = solve_ip_for_ratio(t, 0.2);
  EXPECT_LE(compression_ratio(t, a.bits), 0.2);
  // Cheapest way to save 20% of bits at 4N per layer: layers with N = 20 and 30 (ΔL 0.3).
  EXPECT_EQ(a.bits.at("l1"), (LayerBits{4, 4}));
  EXPECT_EQ(a.bits.at("l2"), (LayerBits{4, 4}));
  EXPECT_NEAR(a.dloss, 0.3, 1e-12);
  const auto all_low = solve_ip_for_ratio(t, 0.125);
  EXPECT_EQ(compression_ratio(t, all_low.bits), 0.125);
}

TEST(Greedy, CompressionPromotesSmallestFirst)
{
  const auto t = two_choice_table({10, 10, 10, 10}, {0.4, 0.3, 0.2, 0.1});
  // Equal sizes promote in layer order.
  const auto cfg = greedy_compression(t, 0.1875);
  EXPECT_EQ(cfg.at("l0"), (LayerBits{8, 8}));
  EXPECT_EQ(cfg.at("l1"), (LayerBits{8, 8}));
  EXPECT_EQ(cfg.at("l2"), (LayerBits{4, 4}));
  EXPECT_EQ(cfg.at("l3"), (LayerBits{4, 4}));
  for (const auto &[id, bits] : greedy_compression(t, 0.125))
    EXPECT_EQ(bits, (LayerBits{4, 4})) << id;
}

TEST(Greedy, AccuracyLowersMostRobustFirst)
{
  const auto t = two_choice_table({10, 10, 10, 10}, {0.4, 0.3, 0.2, 0.1});
  const auto cfg = greedy_accuracy(t, 0.1875);
  EXPECT_EQ(cfg.at("l3"), (LayerBits{4, 4}));
  EXPECT_EQ(cfg.at("l2"), (LayerBits{4, 4}));
  EXPECT_EQ(cfg.at("l1"), (LayerBits{8, 8}));
  for (const auto &[id, bits] : greedy_accuracy(t, 0.25))
    EXPECT_EQ(bits, (LayerBits{8, 8})) << id;
}

TEST(SensitivityTable, CsvRoundTrip)
{
  auto t = two_choice_table({10, 20}, {0.125, -0.03});
  t.layers[1].choices[1].dloss = INFINITY;
  const auto back = SensitivityTable::from_csv(t.to_csv());
  ASSERT_EQ(back.layers.size(), 2u);
  for (size_t l = 0; l < 2; ++l)
  {
    EXPECT_EQ(back.layers[l].id, t.layers[l].id);
    EXPECT_EQ(back.layers[l].params, t.layers[l].params);
    for (size_t c = 0; c < 2; ++c)
    {
      EXPECT_EQ(back.layers[l].choices[c].dloss, t.layers[l].choices[c].dloss);
      EXPECT_EQ(back.layers[l].choices[c].dperf, t.layers[l].choices[c].dperf);
    }
  }
  EXPECT_EQ(t.to_csv().substr(0, 22), "layer,k,n,dloss,dperf\n");
  EXPECT_THROW(SensitivityTable::from_csv("a,b\n"), Error);
}

TEST(Profile, BaseRowsAndGains)
{
  Rng rng(74);
  const ModelGraph fp = fuse_conv_bn(testing::small_resnet(rng));
  const CalibrationSet calib{testing::gaussian({32, 3, 8, 8}, rng), std::nullopt};
  PrecisionVariants v;
  for (int b : {4, 8})
    v[b] = quantize_model(fp, calib, uniform_bits(fp, b), RangeInit::minmax);
  const Tensor teacher = forward(fp, calib.inputs);
  const LossFn loss = [&](const ModelGraph &g) { return kd_loss(teacher, forward(g, calib.inputs)); };
  const auto t = profile_sensitivity(v, 8, {4, 8}, loss, {"conv1"});
  ASSERT_EQ(t.layers.size(), 3u);
  EXPECT_EQ(t.layers[0].choices.size(), 1u); // exempt
  for (const auto &layer : t.layers)
  {
    EXPECT_EQ(layer.choices[0].dloss, 0.0);
    EXPECT_EQ(layer.choices[0].dperf, 0.0);
    if (layer.choices.size() > 1)
      EXPECT_EQ(layer.choices[1].dperf, 4.0 * static_cast<double>(layer.params));
  }
  EXPECT_EQ(t.reference_loss, loss(v.at(8)));
  // Stitching is selection.
  BitConfig cfg = uniform_bits(fp, 8);
  cfg["conv2"] = {4, 4};
  const ModelGraph s = stitch(v, cfg);
  EXPECT_EQ(s.node("conv2").param("weight"), v.at(4).node("conv2").param("weight"));
  EXPECT_EQ(s.node("conv2").weight_quant, v.at(4).node("conv2").weight_quant);
  EXPECT_EQ(s.node("fc").input_quant, v.at(8).node("fc").input_quant);
  EXPECT_EQ(s.node("add").output_quant, v.at(4).node("add").output_quant);
}

} // namespace
} // namespace quantforge
