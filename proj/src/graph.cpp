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

#include "quantforge/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

namespace quantforge
{

namespace
{

void require(bool cond, const std::string &msg)
{
  if (!cond)
    throw Error(msg);
}

Shape infer_output(const LayerNode &n, const std::vector<Shape> &in)
{
  const Shape &x = in[0];
  switch (n.kind)
  {
  case LayerKind::fc: {
    const auto &w = n.param("weight");
    require(x.size() == 1 && w.rank() == 2 && w.dim(1) == x[0],
            "fc '" + n.id + "' weight " + shape_str(w.shape()) + " does not match input " + shape_str(x));
    require(n.param("bias").numel() == w.dim(0), "fc '" + n.id + "' bias size mismatch");
    return {w.dim(0)};
  }
  case LayerKind::conv2d: {
    require(n.conv.has_value(), "conv '" + n.id + "' has no spec");
    const auto &s = *n.conv;
    s.validate();
    require(x.size() == 3 && x[0] == s.in_channels, "conv '" + n.id + "' input " + shape_str(x) + " mismatch");
    require(n.param("weight").shape() == Shape{s.out_channels, s.in_channels, s.kernel, s.kernel},
            "conv '" + n.id + "' weight shape mismatch");
    require(n.param("bias").numel() == s.out_channels, "conv '" + n.id + "' bias size mismatch");
    return {s.out_channels, s.output_dim(x[1]), s.output_dim(x[2])};
  }
  case LayerKind::batchnorm2d:
    for (const char *p : {"gamma", "beta", "mean", "var"})
      require(n.param(p).numel() == x[0], "bn '" + n.id + "' parameter '" + p + "' size mismatch");
    return x;
  case LayerKind::relu: return x;
  case LayerKind::avgpool:
    require(x.size() == 3 && x[1] / n.pool >= 1 && x[2] / n.pool >= 1, "avgpool '" + n.id + "' input too small");
    return {x[0], x[1] / n.pool, x[2] / n.pool};
  case LayerKind::flatten: return {shape_numel(x)};
  case LayerKind::add:
    require(in[1] == x, "add '" + n.id + "' input shapes differ");
    return x;
  }
  throw Error("unsupported layer type");
}

std::vector<const Tensor *> gather(const ModelGraph &g, const LayerNode &n, const Tensor &input,
                                   const std::vector<Tensor> &outputs)
{
  std::vector<const Tensor *> v;
  for (const auto &in : n.inputs)
    v.push_back(in == graph_input_id ? &input : &outputs[g.index_of(in)]);
  return v;
}

} // namespace

void ModelGraph::validate() const
{
  require(!nodes.empty(), "graph has no nodes");
  require(!input_shape.empty(), "graph has no input shape");
  shape_numel(input_shape);
  std::set<std::string> seen;
  for (const auto &n : nodes)
  {
    require(!n.id.empty() && n.id != graph_input_id, "invalid node id '" + n.id + "'");
    require(seen.count(n.id) == 0, "duplicate node id '" + n.id + "'");
    const size_t arity = n.kind == LayerKind::add ? 2 : 1;
    require(n.inputs.size() == arity, "node '" + n.id + "' has wrong number of inputs");
    for (const auto &in : n.inputs)
      require(in == graph_input_id || seen.count(in), "node '" + n.id + "' input '" + in +
                                                          "' is not defined earlier (cycle or bad order)");
    for (const auto &[name, t] : n.params)
      require(t.all_finite(), "non-finite value in '" + n.id + "." + name + "'");
    if (n.weight_quant)
      n.weight_quant->validate();
    if (n.input_quant)
      n.input_quant->validate();
    if (n.output_quant)
      n.output_quant->validate();
    seen.insert(n.id);
  }
  require(seen.count(output), "output node '" + output + "' not found");
  input_shapes();
}

size_t ModelGraph::index_of(const std::string &id) const
{
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id)
      return i;
  throw Error("unknown node '" + id + "'");
}

const LayerNode &ModelGraph::node(const std::string &id) const { return nodes[index_of(id)]; }
LayerNode &ModelGraph::node(const std::string &id) { return nodes[index_of(id)]; }

bool ModelGraph::contains(const std::string &id) const
{
  return std::any_of(nodes.begin(), nodes.end(), [&](const LayerNode &n) { return n.id == id; });
}

std::vector<std::string> ModelGraph::weight_layers() const
{
  std::vector<std::string> ids;
  for (const auto &n : nodes)
    if (n.has_weights())
      ids.push_back(n.id);
  return ids;
}

std::vector<const LayerNode *> ModelGraph::consumers(const std::string &id) const
{
  std::vector<const LayerNode *> out;
  for (const auto &n : nodes)
    if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end())
      out.push_back(&n);
  return out;
}

std::map<std::string, Shape> ModelGraph::input_shapes() const
{
  std::map<std::string, Shape> out_shape{{graph_input_id, input_shape}};
  std::map<std::string, Shape> result;
  for (const auto &n : nodes)
  {
    std::vector<Shape> in;
    for (const auto &i : n.inputs)
    {
      auto it = out_shape.find(i);
      require(it != out_shape.end(), "node '" + n.id + "' input '" + i + "' undefined");
      in.push_back(it->second);
    }
    require(!in.empty(), "node '" + n.id + "' has no inputs");
    result[n.id] = in[0];
    out_shape[n.id] = infer_output(n, in);
  }
  return result;
}

int64_t ModelGraph::total_weight_count() const
{
  int64_t total = 0;
  for (const auto &n : nodes)
    total += n.weight_count();
  return total;
}

void CalibrationSet::validate() const
{
  require(inputs.rank() >= 1 && inputs.dim(0) >= 1, "calibration set is empty");
  require(inputs.all_finite(), "non-finite value in calibration inputs");
  if (labels)
    require(static_cast<int64_t>(labels->size()) == inputs.dim(0), "labels length differs from batch size");
}

CalibrationSet CalibrationSet::subset(std::span<const int64_t> rows) const
{
  CalibrationSet s{inputs.gather_rows(rows), std::nullopt};
  if (labels)
  {
    s.labels.emplace();
    for (auto r : rows)
      s.labels->push_back((*labels)[static_cast<size_t>(r)]);
  }
  return s;
}

Tensor node_forward(const LayerNode &node, std::span<const Tensor *const> inputs)
{
  Tensor y;
  if (node.has_weights())
  {
    const Tensor &x = *inputs[0];
    const Tensor xin = node.input_quant ? quantize(x, *node.input_quant) : x;
    const Tensor &w = node.param("weight");
    const Tensor wq = node.weight_quant ? quantize(w, *node.weight_quant) : w;
    y = node.kind == LayerKind::fc ? fc_forward(xin, wq, node.param("bias"))
                                   : conv2d(xin, wq, node.param("bias"), *node.conv);
  }
  else
    y = layer_forward(node, inputs);
  return node.output_quant ? quantize(y, *node.output_quant) : y;
}

Tensor forward(const ModelGraph &g, const Tensor &x)
{
  require(x.rank() == g.input_shape.size() + 1, "input rank mismatch: " + shape_str(x.shape()));
  std::vector<Tensor> outputs(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i)
  {
    auto in = gather(g, g.nodes[i], x, outputs);
    outputs[i] = node_forward(g.nodes[i], in);
  }
  return std::move(outputs[g.index_of(g.output)]);
}

ForwardTrace forward_trace(const ModelGraph &g, const Tensor &x)
{
  require(x.rank() == g.input_shape.size() + 1, "input rank mismatch: " + shape_str(x.shape()));
  require(g.nodes.back().id == g.output, "traced graphs must end at their output node");
  const size_t n = g.nodes.size();
  ForwardTrace t{x, std::vector<Tensor>(n), std::vector<Tensor>(n), std::vector<Tensor>(n), std::vector<Tensor>(n)};
  for (size_t i = 0; i < n; ++i)
  {
    const auto &node = g.nodes[i];
    auto in = gather(g, node, x, t.outputs);
    Tensor y;
    if (node.has_weights())
    {
      t.layer_input[i] = node.input_quant ? quantize(*in[0], *node.input_quant) : *in[0];
      const Tensor &w = node.param("weight");
      t.weight[i] = node.weight_quant ? quantize(w, *node.weight_quant) : w;
      y = node.kind == LayerKind::fc ? fc_forward(t.layer_input[i], t.weight[i], node.param("bias"))
                                     : conv2d(t.layer_input[i], t.weight[i], node.param("bias"), *node.conv);
    }
    else
      y = layer_forward(node, in);
    if (node.output_quant)
    {
      t.pre_output[i] = y;
      y = quantize(y, *node.output_quant);
    }
    t.outputs[i] = std::move(y);
  }
  return t;
}

std::map<std::string, Tensor> collect_inputs(const ModelGraph &g, const Tensor &x)
{
  const auto t = forward_trace(g, x);
  std::map<std::string, Tensor> out;
  for (const auto &node : g.nodes)
  {
    const auto &src = node.inputs[0];
    out[node.id] = src == graph_input_id ? x : t.outputs[g.index_of(src)];
  }
  return out;
}

ParamGrads backward(const ModelGraph &g, const ForwardTrace &trace, const Tensor &grad_output, TrainableSet which)
{
  const size_t n = g.nodes.size();
  require(trace.outputs.size() == n, "trace does not match graph");
  std::vector<std::optional<Tensor>> grads(n);
  grads[g.index_of(g.output)] = grad_output;
  ParamGrads result;

  auto accumulate = [&](const std::string &id, Tensor gx) {
    if (id == graph_input_id)
      return;
    auto &slot = grads[g.index_of(id)];
    if (!slot)
      slot = std::move(gx);
    else
      for (int64_t k = 0; k < gx.numel(); ++k)
        (*slot)[k] += gx[k];
  };

  for (size_t i = n; i-- > 0;)
  {
    if (!grads[i])
      continue;
    const auto &node = g.nodes[i];
    Tensor up = std::move(*grads[i]);
    if (node.output_quant)
      up = ste_backward(trace.pre_output[i], *node.output_quant, up).grad_x;
    auto raw = gather(g, node, trace.input, trace.outputs);
    if (node.has_weights())
    {
      auto wg = node.kind == LayerKind::fc ? fc_backward(trace.layer_input[i], trace.weight[i], up)
                                           : conv2d_backward(trace.layer_input[i], trace.weight[i], up, *node.conv);
      auto &pg = result[node.id];
      pg["bias"] = std::move(wg.grad_b);
      if (which == TrainableSet::all)
        pg["weight"] = std::move(wg.grad_w);
      if (node.inputs[0] != graph_input_id)
      {
        Tensor gx = node.input_quant ? ste_backward(*raw[0], *node.input_quant, wg.grad_x).grad_x
                                     : std::move(wg.grad_x);
        accumulate(node.inputs[0], std::move(gx));
      }
      continue;
    }
    auto lg = layer_backward(node, raw, up);
    if (which == TrainableSet::all)
      for (auto &[name, t] : lg.grad_params)
        result[node.id][name] = std::move(t);
    for (size_t k = 0; k < node.inputs.size(); ++k)
      accumulate(node.inputs[k], std::move(lg.grad_inputs[k]));
  }
  return result;
}

ModelGraph strip_quantization(const ModelGraph &g)
{
  ModelGraph out = g;
  for (auto &n : out.nodes)
  {
    n.weight_quant.reset();
    n.input_quant.reset();
    n.output_quant.reset();
  }
  return out;
}

void rewire(ModelGraph &g, const std::string &from, const std::string &to)
{
  for (auto &n : g.nodes)
    for (auto &in : n.inputs)
      if (in == from && n.id != to)
        in = to;
  if (g.output == from)
    g.output = to;
}

ModelGraph fuse_conv_bn(const ModelGraph &g)
{
  ModelGraph out = g;
  std::vector<std::string> removed;
  for (const auto &bn : g.nodes)
  {
    if (bn.kind != LayerKind::batchnorm2d)
      continue;
    const std::string &pred_id = bn.inputs[0];
    require(pred_id != graph_input_id && g.node(pred_id).has_weights(),
            "bn without weight-layer predecessor: '" + bn.id + "'");
    require(g.consumers(pred_id).size() == 1, "weight layer '" + pred_id + "' feeds more than the bn '" + bn.id + "'");
    auto &w = out.node(pred_id);
    require(!w.folded_bn.has_value(), "weight layer '" + pred_id + "' already has a folded bn");
    require(!w.weight_quant, "cannot fuse bn into quantized layer '" + pred_id + "'");
    const auto &gamma = bn.param("gamma"), &beta = bn.param("beta"), &mean = bn.param("mean"), &var = bn.param("var");
    Tensor &wt = w.param("weight");
    Tensor &b = w.param("bias");
    const int64_t co = wt.dim(0), inner = wt.numel() / co;
    require(gamma.numel() == co, "bn '" + bn.id + "' channel count mismatch");
    for (int64_t c = 0; c < co; ++c)
    {
      const float scale = gamma[c] / std::sqrt(var[c] + bn.eps);
      for (int64_t k = 0; k < inner; ++k)
        wt[c * inner + k] *= scale;
      b[c] = scale * (b[c] - mean[c]) + beta[c];
    }
    w.folded_bn = FoldedBn{gamma, beta, bn.eps};
    removed.push_back(bn.id);
    rewire(out, bn.id, pred_id);
  }
  std::erase_if(out.nodes, [&](const LayerNode &n) {
    return std::find(removed.begin(), removed.end(), n.id) != removed.end();
  });
  return out;
}

uint64_t param_checksum(const ModelGraph &g, const std::function<bool(const LayerNode &, const std::string &)> &pick)
{
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void *p, size_t len) {
    const auto *b = static_cast<const unsigned char *>(p);
    for (size_t i = 0; i < len; ++i)
    {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto &n : g.nodes)
    for (const auto &[name, t] : n.params)
      if (pick(n, name))
      {
        mix(n.id.data(), n.id.size());
        mix(name.data(), name.size());
        mix(t.ptr(), static_cast<size_t>(t.numel()) * sizeof(float));
      }
  return h;
}

} // namespace quantforge
