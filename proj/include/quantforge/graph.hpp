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

#ifndef QUANTFORGE_GRAPH_HPP
#define QUANTFORGE_GRAPH_HPP

#include "quantforge/layers.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace quantforge
{

// Node id used to reference the graph input.
inline constexpr const char *graph_input_id = "input";

/**
 * Sequential-with-residuals DAG stored in topological order. Quantizer state
 * lives on the nodes, so the same type represents both the FP32 model and a
 * fake-quantized model.
 */
struct ModelGraph
{
  Shape input_shape; // per sample, without the batch dimension
  std::vector<LayerNode> nodes;
  std::string output;

  // Unique ids, inputs defined before use (acyclic), arity, a single output,
  // parameter shapes consistent with the inferred activation shapes.
  void validate() const;

  size_t index_of(const std::string &id) const;
  const LayerNode &node(const std::string &id) const;
  LayerNode &node(const std::string &id);
  bool contains(const std::string &id) const;

  // fc/conv2d ids in topological order.
  std::vector<std::string> weight_layers() const;
  std::vector<const LayerNode *> consumers(const std::string &id) const;

  // Per-sample input shape of every node, keyed by id (add: its first input).
  std::map<std::string, Shape> input_shapes() const;
  int64_t total_weight_count() const;
};

struct CalibrationSet
{
  Tensor inputs; // [B × ...]
  std::optional<std::vector<int64_t>> labels;

  int64_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
  void validate() const;
  CalibrationSet subset(std::span<const int64_t> rows) const;
};

/**
 * Per-node values from one forward pass. For weight layers `layer_input`
 * holds the (possibly quantized) tensor fed to the kernel and `weight` the
 * (possibly quantized) weight used; `pre_output` is the value before any
 * output quantizer.
 */
struct ForwardTrace
{
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<Tensor> pre_output;
  std::vector<Tensor> layer_input;
  std::vector<Tensor> weight;

  const Tensor &result() const { return outputs.back(); }
};

// Computes one node from its raw inputs, applying whatever quantizers it carries.
Tensor node_forward(const LayerNode &node, std::span<const Tensor *const> inputs);

Tensor forward(const ModelGraph &g, const Tensor &x);
ForwardTrace forward_trace(const ModelGraph &g, const Tensor &x);
// FP input to every node, keyed by node id (first input for add).
std::map<std::string, Tensor> collect_inputs(const ModelGraph &g, const Tensor &x);

enum class TrainableSet
{
  biases,
  all,
};

using ParamGrads = std::map<std::string, std::map<std::string, Tensor>>;

/**
 * Backpropagates `grad_output` (gradient w.r.t. the graph output) through a
 * traced forward pass. Quantizers use straight-through gradients for their
 * inputs; quantized weights are treated as the weights. Returns parameter
 * gradients for the requested trainable set.
 */
ParamGrads backward(const ModelGraph &g, const ForwardTrace &trace, const Tensor &grad_output, TrainableSet which);

// Removes all quantizer state.
ModelGraph strip_quantization(const ModelGraph &g);

/**
 * Folds every batchnorm2d into its fc/conv2d predecessor:
 * W' = W·γ/√(σ²+ε), b' = γ/√(σ²+ε)·(b−μ)+β. The folded γ, β, ε are kept on the
 * weight node for later reconstruction.
 */
ModelGraph fuse_conv_bn(const ModelGraph &g);

// Rewires every consumer of `from` (and the graph output) to `to`.
void rewire(ModelGraph &g, const std::string &from, const std::string &to);

// FNV-1a over the bytes of the selected parameters, in node/param order.
uint64_t param_checksum(const ModelGraph &g, const std::function<bool(const LayerNode &, const std::string &)> &pick);

} // namespace quantforge

#endif // QUANTFORGE_GRAPH_HPP
