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

#ifndef QUANTFORGE_LAYERS_HPP
#define QUANTFORGE_LAYERS_HPP

#include "quantforge/quantizer.hpp"
#include "quantforge/tensor.hpp"

#include <atomic>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace quantforge
{

enum class LayerKind
{
  fc,
  conv2d,
  batchnorm2d,
  relu,
  avgpool,
  flatten,
  add,
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string &s);

struct ConvSpec
{
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t padding = 0;

  void validate() const;
  // floor((in + 2*pad - k)/stride) + 1; throws if < 1.
  int64_t output_dim(int64_t in) const;
  bool operator==(const ConvSpec &) const = default;
};

// BN affine parameters that were folded into a weight layer; kept so the BN
// can be reconstructed later.
struct FoldedBn
{
  Tensor gamma;
  Tensor beta;
  float eps = 1e-5f;
};

/**
 * One graph node. Parameter names: "weight", "bias" for fc/conv2d;
 * "gamma", "beta", "mean", "var" for batchnorm2d.
 *
 * Quantizer slots: weight layers carry `weight_quant` (per-channel) and
 * `input_quant` (per-tensor, applied to the layer input); add nodes may carry
 * `output_quant`. Empty slots mean full precision.
 */
struct LayerNode
{
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  std::map<std::string, Tensor> params;
  std::optional<ConvSpec> conv;
  int64_t pool = 2;
  float eps = 1e-5f;
  std::optional<FoldedBn> folded_bn;
  std::optional<QuantParams> weight_quant;
  std::optional<QuantParams> input_quant;
  std::optional<QuantParams> output_quant;

  bool has_weights() const noexcept { return kind == LayerKind::fc || kind == LayerKind::conv2d; }
  bool has_param(const std::string &name) const { return params.count(name) != 0; }
  const Tensor &param(const std::string &name) const;
  Tensor &param(const std::string &name);
  int64_t weight_count() const;
  // Output channels: weight rows for fc, C_o for conv.
  int64_t out_channels() const;
};

// fc: x[B×N], w[M×N], b[M] -> [B×M]
Tensor fc_forward(const Tensor &x, const Tensor &w, const Tensor &b);
// Cross-correlation: x[B×Ci×H×W], w[Co×Ci×k×k], b[Co].
Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, const ConvSpec &spec);
// Inference-mode batch norm over axis 1 of a rank-2 or rank-4 tensor.
Tensor batchnorm_forward(const Tensor &x, const Tensor &gamma, const Tensor &beta, const Tensor &mean,
                         const Tensor &var, float eps);
Tensor relu(const Tensor &x);
Tensor avgpool(const Tensor &x, int64_t k);
Tensor flatten(const Tensor &x);
Tensor add(const Tensor &a, const Tensor &b);

struct WeightGrads
{
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;
};

WeightGrads fc_backward(const Tensor &x, const Tensor &w, const Tensor &upstream);
WeightGrads conv2d_backward(const Tensor &x, const Tensor &w, const Tensor &upstream, const ConvSpec &spec);
// grad_w/grad_b hold d/dgamma and d/dbeta.
WeightGrads batchnorm_backward(const Tensor &x, const Tensor &gamma, const Tensor &mean, const Tensor &var,
                               float eps, const Tensor &upstream);
Tensor relu_backward(const Tensor &x, const Tensor &upstream);
Tensor avgpool_backward(const Shape &input_shape, int64_t k, const Tensor &upstream);

// Full-precision layer semantics using the node's own parameters.
Tensor layer_forward(const LayerNode &node, std::span<const Tensor *const> inputs);
Tensor layer_forward(const LayerNode &node, const Tensor &x);

struct LayerGrads
{
  std::vector<Tensor> grad_inputs;
  std::map<std::string, Tensor> grad_params;
};

LayerGrads layer_backward(const LayerNode &node, std::span<const Tensor *const> inputs, const Tensor &upstream);
LayerGrads layer_backward(const LayerNode &node, const Tensor &x, const Tensor &upstream);

// Process-wide count of backward kernel invocations (layer and quantizer).
uint64_t gradient_calls() noexcept;
void count_gradient_call() noexcept;

} // namespace quantforge

#endif // QUANTFORGE_LAYERS_HPP
