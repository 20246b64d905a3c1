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

#include "quantforge/bn_tuner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace quantforge
{

namespace
{

struct BatchStats
{
  std::vector<double> mean, var;
};

// Per-channel mean and biased variance over axis 1 of a rank-2 or rank-4 tensor.
BatchStats channel_stats(const Tensor &x)
{
  const int64_t batch = x.dim(0), c = x.dim(1), inner = x.numel() / (batch * c);
  BatchStats s{std::vector<double>(static_cast<size_t>(c)), std::vector<double>(static_cast<size_t>(c))};
  const double count = static_cast<double>(batch * inner);
  for (int64_t ch = 0; ch < c; ++ch)
  {
    double sum = 0.0;
    for (int64_t n = 0; n < batch; ++n)
      for (int64_t i = 0; i < inner; ++i)
        sum += x[(n * c + ch) * inner + i];
    const double mean = sum / count;
    double sq = 0.0;
    for (int64_t n = 0; n < batch; ++n)
      for (int64_t i = 0; i < inner; ++i)
      {
        const double d = x[(n * c + ch) * inner + i] - mean;
        sq += d * d;
      }
    s.mean[static_cast<size_t>(ch)] = mean;
    s.var[static_cast<size_t>(ch)] = sq / count;
  }
  return s;
}

} // namespace

void BnTuneConfig::validate() const
{
  if (iterations < 0 || batch_size < 1)
    throw Error("BN tuning needs non-negative iterations and a positive batch size");
  if (!(momentum > 0.0f && momentum <= 1.0f))
    throw Error("BN tuning momentum must be in (0, 1]");
}

std::string reconstructed_bn_id(const std::string &layer_id) { return layer_id + "_bnr"; }

ModelGraph reconstruct_bn(const ModelGraph &g)
{
  ModelGraph out;
  out.input_shape = g.input_shape;
  out.output = g.output;
  std::vector<std::pair<std::string, std::string>> rewires;
  for (const auto &node : g.nodes)
  {
    out.nodes.push_back(node);
    if (!node.has_weights() || !node.folded_bn)
      continue;
    const auto &f = *node.folded_bn;
    const int64_t c = node.out_channels();
    if (f.gamma.numel() != c || f.beta.numel() != c)
      throw Error("folded bn of '" + node.id + "' does not match its channels");
    const std::string id = reconstructed_bn_id(node.id);
    if (g.contains(id))
      throw Error("node '" + id + "' already exists");
    LayerNode bn;
    bn.id = id;
    bn.kind = LayerKind::batchnorm2d;
    bn.inputs = {node.id};
    bn.eps = f.eps;
    Tensor var(f.gamma.shape()), gamma(f.gamma.shape());
    for (int64_t i = 0; i < c; ++i)
    {
      var[i] = f.gamma[i] * f.gamma[i];
      gamma[i] = std::sqrt(var[i] + f.eps);
    }
    bn.params.emplace("gamma", gamma);
    bn.params.emplace("beta", f.beta);
    bn.params.emplace("mean", f.beta);
    bn.params.emplace("var", var);
    out.nodes.push_back(std::move(bn));
    rewires.emplace_back(node.id, id);
  }
  for (const auto &[from, to] : rewires)
    rewire(out, from, to);
  out.validate();
  return out;
}

ModelGraph tune_bn(const ModelGraph &g, const CalibrationSet &calib, const BnTuneConfig &cfg)
{
  cfg.validate();
  calib.validate();
  ModelGraph out = g;
  const int64_t rows = calib.size();
  const double m = cfg.momentum;
  for (int pass = 0; pass < cfg.iterations; ++pass)
    for (int64_t begin = 0; begin < rows; begin += cfg.batch_size)
    {
      const Tensor x = calib.inputs.slice_rows(begin, std::min(rows, begin + cfg.batch_size));
      std::vector<Tensor> values(out.nodes.size());
      auto value_of = [&](const std::string &id) -> const Tensor * {
        return id == graph_input_id ? &x : &values[out.index_of(id)];
      };
      for (size_t i = 0; i < out.nodes.size(); ++i)
      {
        LayerNode &node = out.nodes[i];
        std::vector<const Tensor *> in;
        for (const auto &id : node.inputs)
          in.push_back(value_of(id));
        if (node.kind == LayerKind::batchnorm2d)
        {
          const BatchStats s = channel_stats(*in[0]);
          Tensor &mean = node.param("mean"), &var = node.param("var");
          for (int64_t c = 0; c < mean.numel(); ++c)
          {
            const size_t k = static_cast<size_t>(c);
            mean[c] = static_cast<float>((1.0 - m) * mean[c] + m * s.mean[k]);
            var[c] = std::max(static_cast<float>((1.0 - m) * var[c] + m * s.var[k]), node.eps);
          }
        }
        values[i] = node_forward(node, in);
      }
    }
  return out;
}

ModelGraph refuse_bn(const ModelGraph &g)
{
  ModelGraph out = g;
  std::vector<std::string> removed;
  for (const auto &bn : g.nodes)
  {
    if (bn.kind != LayerKind::batchnorm2d)
      continue;
    const std::string &pred = bn.inputs[0];
    if (pred == graph_input_id || !g.node(pred).has_weights())
      throw Error("bn without weight-layer predecessor: '" + bn.id + "'");
    if (g.consumers(pred).size() != 1)
      throw Error("weight layer '" + pred + "' feeds more than the bn '" + bn.id + "'");
    if (bn.output_quant)
      throw Error("cannot re-fuse bn '" + bn.id + "' carrying an output quantizer");
    LayerNode &w = out.node(pred);
    if (w.weight_quant && !w.weight_quant->passthrough() && w.weight_quant->granularity != Granularity::per_channel)
      throw Error("re-fusing bn into '" + pred + "' needs per-channel weight quantization");

    const auto &gamma = bn.param("gamma"), &beta = bn.param("beta"), &mean = bn.param("mean"), &var = bn.param("var");
    Tensor &wt = w.param("weight"), &b = w.param("bias");
    const int64_t co = wt.dim(0), inner = wt.numel() / co;
    if (gamma.numel() != co)
      throw Error("bn '" + bn.id + "' channel count mismatch");
    const bool rescale_q = w.weight_quant && !w.weight_quant->passthrough();
    std::optional<FoldedBn> folded = w.folded_bn;
    for (int64_t c = 0; c < co; ++c)
    {
      const float r = static_cast<float>(gamma[c] / std::sqrt(static_cast<double>(var[c]) + bn.eps));
      for (int64_t k = 0; k < inner; ++k)
        wt[c * inner + k] *= r;
      b[c] = r * (b[c] - mean[c]) + beta[c];
      if (rescale_q)
      {
        w.weight_quant->step[static_cast<size_t>(c)] *= r;
        w.weight_quant->zero_point[static_cast<size_t>(c)] *= r;
      }
      if (folded) // keep the composite affine for a later reconstruction
      {
        folded->beta[c] = r * (folded->beta[c] - mean[c]) + beta[c];
        folded->gamma[c] *= r;
      }
    }
    w.folded_bn = folded;
    removed.push_back(bn.id);
    rewire(out, bn.id, pred);
  }
  std::erase_if(out.nodes, [&](const LayerNode &n) {
    return std::find(removed.begin(), removed.end(), n.id) != removed.end();
  });
  out.validate();
  return out;
}

ModelGraph bn_tune(const ModelGraph &g, const CalibrationSet &calib, const BnTuneConfig &cfg)
{
  return refuse_bn(tune_bn(reconstruct_bn(g), calib, cfg));
}

} // namespace quantforge
