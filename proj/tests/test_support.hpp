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

#ifndef QUANTFORGE_TEST_SUPPORT_HPP
#define QUANTFORGE_TEST_SUPPORT_HPP

#include "quantforge/graph.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace quantforge::testing
{

using Rng = std::mt19937_64;

inline Tensor uniform(Shape shape, Rng &rng, float lo = -1.0f, float hi = 1.0f)
{
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> d(lo, hi);
  for (auto &v : t.data())
    v = d(rng);
  return t;
}

inline Tensor gaussian(Shape shape, Rng &rng, float stddev = 1.0f, float mean = 0.0f)
{
  Tensor t(std::move(shape));
  std::normal_distribution<float> d(mean, stddev);
  for (auto &v : t.data())
    v = d(rng);
  return t;
}

inline LayerNode make_fc(const std::string &id, const std::string &input, int64_t in, int64_t out, Rng &rng)
{
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::fc;
  n.inputs = {input};
  n.params.emplace("weight", gaussian({out, in}, rng, 1.0f / std::sqrt(static_cast<float>(in))));
  n.params.emplace("bias", gaussian({out}, rng, 0.1f));
  return n;
}

inline LayerNode make_conv(const std::string &id, const std::string &input, ConvSpec spec, Rng &rng)
{
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::conv2d;
  n.inputs = {input};
  n.conv = spec;
  const float fan_in = static_cast<float>(spec.in_channels * spec.kernel * spec.kernel);
  n.params.emplace("weight", gaussian({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, rng,
                                      std::sqrt(2.0f / fan_in)));
  n.params.emplace("bias", gaussian({spec.out_channels}, rng, 0.1f));
  return n;
}

inline LayerNode make_bn(const std::string &id, const std::string &input, int64_t c, Rng &rng)
{
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::batchnorm2d;
  n.inputs = {input};
  n.params.emplace("gamma", uniform({c}, rng, 0.5f, 1.5f));
  n.params.emplace("beta", uniform({c}, rng, -0.3f, 0.3f));
  n.params.emplace("mean", uniform({c}, rng, -0.3f, 0.3f));
  n.params.emplace("var", uniform({c}, rng, 0.5f, 2.0f));
  return n;
}

inline LayerNode make_simple(const std::string &id, LayerKind kind, std::vector<std::string> inputs)
{
  LayerNode n;
  n.id = id;
  n.kind = kind;
  n.inputs = std::move(inputs);
  return n;
}

// conv-bn-relu, conv-bn, residual add, relu, avgpool, flatten, fc on [3×8×8] inputs.
inline ModelGraph small_resnet(Rng &rng, int64_t classes = 5)
{
  ModelGraph g;
  g.input_shape = {3, 8, 8};
  g.nodes.push_back(make_conv("conv1", graph_input_id, {3, 6, 3, 1, 1}, rng));
  g.nodes.push_back(make_bn("bn1", "conv1", 6, rng));
  g.nodes.push_back(make_simple("relu1", LayerKind::relu, {"bn1"}));
  g.nodes.push_back(make_conv("conv2", "relu1", {6, 6, 3, 1, 1}, rng));
  g.nodes.push_back(make_bn("bn2", "conv2", 6, rng));
  g.nodes.push_back(make_simple("add", LayerKind::add, {"relu1", "bn2"}));
  g.nodes.push_back(make_simple("relu2", LayerKind::relu, {"add"}));
  g.nodes.push_back(make_simple("pool", LayerKind::avgpool, {"relu2"}));
  g.nodes.push_back(make_simple("flat", LayerKind::flatten, {"pool"}));
  g.nodes.push_back(make_fc("fc", "flat", 6 * 4 * 4, classes, rng));
  g.output = "fc";
  g.validate();
  return g;
}

inline std::filesystem::path fixture_dir() { return QUANTFORGE_FIXTURE_DIR; }

inline std::filesystem::path scratch_dir(const std::string &name)
{
  auto p = std::filesystem::temp_directory_path() / ("quantforge_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

} // namespace quantforge::testing

#endif // QUANTFORGE_TEST_SUPPORT_HPP
