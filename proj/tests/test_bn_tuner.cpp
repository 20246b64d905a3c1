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

#include "quantforge/bn_tuner.hpp"
#include "quantforge/quant_model.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace quantforge
{
namespace
{

using testing::Rng;
using testing::gaussian;
using testing::uniform;

float max_rel_diff(const Tensor &a, const Tensor &b)
{
  float m = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]) / (1.0f + std::fabs(b[i])));
  return m;
}

TEST(ReconstructBn, IsIdentityAtInit)
{
  Rng rng(80);
  for (int trial = 0; trial < 50; ++trial)
  {
    ModelGraph g = testing::small_resnet(rng);
    for (const char *id : {"bn1", "bn2"})
    {
      g.node(id).param("gamma") = uniform({6}, rng, -2.0f, 2.0f);
      g.node(id).eps = std::pow(10.0f, uniform({1}, rng, -6.0f, -2.0f)[0]);
    }
    const ModelGraph fused = fuse_conv_bn(g);
    const ModelGraph r = reconstruct_bn(fused);
    const auto &bn = r.node(reconstructed_bn_id("conv1"));
    const Tensor x = gaussian({4, 6, 5, 5}, rng, 3.0f);
    const Tensor y = batchnorm_forward(x, bn.param("gamma"), bn.param("beta"), bn.param("mean"), bn.param("var"), bn.eps);
    EXPECT_LE(max_rel_diff(y, x), 1e-6f);

    const Tensor in = gaussian({8, 3, 8, 8}, rng);
    EXPECT_LE(max_abs_diff(forward(r, in), forward(g, in)), 1e-5f);
  }
}

TEST(ReconstructBn, UnitBnParameters)
{
  Rng rng(81);
  ModelGraph g = testing::small_resnet(rng);
  g.node("bn1").param("gamma").fill(1.0f);
  g.node("bn1").param("beta").fill(0.0f);
  const ModelGraph r = reconstruct_bn(fuse_conv_bn(g));
  const auto &bn = r.node(reconstructed_bn_id("conv1"));
  EXPECT_EQ(bn.param("mean"), Tensor({6}, 0.0f));
  EXPECT_EQ(bn.param("var"), Tensor({6}, 1.0f));
  EXPECT_EQ(bn.param("gamma"), Tensor({6}, std::sqrt(1.0f + 1e-5f)));
  EXPECT_EQ(r.node("relu1").inputs, std::vector<std::string>{reconstructed_bn_id("conv1")});
  EXPECT_EQ(r.node(reconstructed_bn_id("conv1")).inputs, std::vector<std::string>{"conv1"});
}

// fc with identity weights on data whose every batch of `batch` rows has
// per-channel mean `m` and biased variance `v`.
struct ExactStatsCase
{
  ModelGraph g;
  CalibrationSet calib;
};

ExactStatsCase exact_stats_case(Rng &rng, int batch)
{
  const int64_t c = 4;
  const Tensor m = uniform({c}, rng, -1.0f, 1.0f), v = uniform({c}, rng, 0.5f, 2.0f);
  ModelGraph g;
  g.input_shape = {c};
  LayerNode fc = testing::make_fc("fc", graph_input_id, c, c, rng);
  fc.param("weight").fill(0.0f);
  for (int64_t i = 0; i < c; ++i)
    fc.param("weight")[i * c + i] = 1.0f;
  fc.param("bias").fill(0.0f);
  Tensor gamma({c});
  for (int64_t i = 0; i < c; ++i)
    gamma[i] = std::sqrt(v[i]);
  fc.folded_bn = FoldedBn{gamma, m, 1e-5f};
  g.nodes.push_back(fc);
  g.output = "fc";
  Tensor x({batch * 4, c});
  for (int64_t r = 0; r < batch * 4; ++r)
    for (int64_t i = 0; i < c; ++i)
      x[r * c + i] = m[i] + (r % 2 ? 1.0f : -1.0f) * gamma[i];
  return {g, {x, std::nullopt}};
}

TEST(TuneBn, FullPrecisionStatisticsStayPut)
{
  Rng rng(82);
  const auto [g, calib] = exact_stats_case(rng, 8);
  const ModelGraph r = reconstruct_bn(g);
  const ModelGraph t = tune_bn(r, calib, {10, 0.1f, 8});
  const auto &before = r.node("fc_bnr"), &after = t.node("fc_bnr");
  for (int64_t i = 0; i < 4; ++i)
  {
    EXPECT_NEAR(after.param("mean")[i], before.param("mean")[i], 1e-5f);
    EXPECT_NEAR(after.param("var")[i], before.param("var")[i], 1e-5f);
  }
  EXPECT_LE(max_abs_diff(forward(refuse_bn(t), calib.inputs), forward(g, calib.inputs)), 1e-5f);
}

TEST(TuneBn, OnlyStatisticsChange)
{
  Rng rng(83);
  const ModelGraph fused = fuse_conv_bn(testing::small_resnet(rng));
  const CalibrationSet calib{gaussian({40, 3, 8, 8}, rng), std::nullopt};
  const ModelGraph r = reconstruct_bn(quantize_model(fused, calib, uniform_bits(fused, 4), RangeInit::minmax));
  const ModelGraph t = tune_bn(r, calib);
  auto not_stats = [](const LayerNode &n, const std::string &p) {
    return n.kind != LayerKind::batchnorm2d || (p != "mean" && p != "var");
  };
  auto stats = [&](const LayerNode &n, const std::string &p) { return !not_stats(n, p); };
  EXPECT_EQ(param_checksum(t, not_stats), param_checksum(r, not_stats));
  EXPECT_NE(param_checksum(t, stats), param_checksum(r, stats));
  for (size_t i = 0; i < r.nodes.size(); ++i)
  {
    EXPECT_EQ(t.nodes[i].weight_quant, r.nodes[i].weight_quant);
    EXPECT_EQ(t.nodes[i].input_quant, r.nodes[i].input_quant);
  }
}

TEST(TuneBn, ZeroVarianceChannelFloorsAtEps)
{
  Rng rng(84);
  auto [g, calib] = exact_stats_case(rng, 8);
  g.node("fc").param("weight")[0] = 0.0f; // channel 0 becomes the constant bias
  const ModelGraph t = tune_bn(reconstruct_bn(g), calib, {30, 0.1f, 8});
  const auto &bn = t.node("fc_bnr");
  EXPECT_NEAR(bn.param("var")[0], bn.eps, 1e-9f);
  EXPECT_TRUE(forward(refuse_bn(t), calib.inputs).all_finite());
}

TEST(RefuseBn, IdentityStateLeavesLayerUnchanged)
{
  Rng rng(85);
  const ModelGraph fused = fuse_conv_bn(testing::small_resnet(rng));
  const CalibrationSet calib{gaussian({16, 3, 8, 8}, rng), std::nullopt};
  const ModelGraph q = quantize_model(fused, calib, uniform_bits(fused, 4), RangeInit::mse);
  const ModelGraph back = refuse_bn(reconstruct_bn(q));
  for (const auto &id : q.weight_layers())
  {
    const auto &a = q.node(id), &b = back.node(id);
    EXPECT_LE(max_rel_diff(b.param("weight"), a.param("weight")), 1e-7f);
    EXPECT_LE(max_rel_diff(b.param("bias"), a.param("bias")), 1e-6f);
    for (size_t c = 0; c < a.weight_quant->channels(); ++c)
      EXPECT_NEAR(b.weight_quant->step[c], a.weight_quant->step[c], 1e-7f * a.weight_quant->step[c]);
  }
}

TEST(RefuseBn, WeightCodesBitExactAndOutputsMatch)
{
  Rng rng(86);
  for (int trial = 0; trial < 50; ++trial)
  {
    const ModelGraph fused = fuse_conv_bn(testing::small_resnet(rng));
    const CalibrationSet calib{gaussian({16, 3, 8, 8}, rng), std::nullopt};
    const ModelGraph q = quantize_model(fused, calib, uniform_bits(fused, 2 + trial % 7), RangeInit::mse);
    ModelGraph withbn = reconstruct_bn(q);
    for (auto &n : withbn.nodes)
      if (n.kind == LayerKind::batchnorm2d)
      {
        n.param("mean") = gaussian({6}, rng, 0.3f);
        n.param("var") = uniform({6}, rng, 0.1f, 4.0f);
      }
    const ModelGraph refused = refuse_bn(withbn);
    for (const auto &id : {"conv1", "conv2"})
    {
      const auto &a = withbn.node(id), &b = refused.node(id);
      EXPECT_EQ(quantize_codes(b.param("weight"), *b.weight_quant), quantize_codes(a.param("weight"), *a.weight_quant));
      // The refused layer's output equals BN applied to the original layer's output.
      const Tensor x = relu(gaussian({4, 3, 8, 8}, rng));
      if (std::string(id) == "conv2")
        continue;
      const Tensor *in[] = {&x};
      const auto &bn = withbn.node(reconstructed_bn_id(id));
      const Tensor ref = batchnorm_forward(node_forward(a, in), bn.param("gamma"), bn.param("beta"), bn.param("mean"),
                                           bn.param("var"), bn.eps);
      EXPECT_LE(max_rel_diff(node_forward(b, in), ref), 1e-5f);
    }
    const Tensor out_a = forward(withbn, calib.inputs), out_b = forward(refused, calib.inputs);
    EXPECT_LE(max_rel_diff(out_b, out_a), 1e-4f);
  }
}

TEST(RefuseBn, RejectsPerTensorWeights)
{
  Rng rng(87);
  const ModelGraph fused = fuse_conv_bn(testing::small_resnet(rng));
  const CalibrationSet calib{gaussian({8, 3, 8, 8}, rng), std::nullopt};
  ModelGraph r = reconstruct_bn(quantize_model(fused, calib, uniform_bits(fused, 4), RangeInit::minmax));
  r.node("conv1").weight_quant = init_minmax(r.node("conv1").param("weight"), 4, Granularity::per_tensor);
  EXPECT_THROW(refuse_bn(r), Error);
}

TEST(RefuseBn, ReconstructAfterRefuseIsIdentityAgain)
{
  Rng rng(88);
  const ModelGraph fused = fuse_conv_bn(testing::small_resnet(rng));
  const CalibrationSet calib{gaussian({32, 3, 8, 8}, rng), std::nullopt};
  const ModelGraph once = bn_tune(fused, calib);
  const ModelGraph again = reconstruct_bn(once);
  EXPECT_LE(max_abs_diff(forward(again, calib.inputs), forward(once, calib.inputs)), 1e-5f);
}

} // namespace
} // namespace quantforge
