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

#ifndef QUANTFORGE_QUANT_MODEL_HPP
#define QUANTFORGE_QUANT_MODEL_HPP

#include "quantforge/graph.hpp"

#include <map>
#include <string>

namespace quantforge
{

struct LayerBits
{
  int weight_bits = 8;
  int act_bits = 8;
  bool operator==(const LayerBits &) const = default;
  auto operator<=>(const LayerBits &) const = default;
};

// Weight-layer id -> (weight bits k, activation bits n).
using BitConfig = std::map<std::string, LayerBits>;

BitConfig uniform_bits(const ModelGraph &g, int bits);
// Sets the first and last weight layers to `base_bits` for both weights and activations.
BitConfig with_exemptions(const ModelGraph &g, BitConfig cfg, int base_bits);
// Throws unless every weight layer is covered with bits in [2,8]∪{32}.
void validate_bit_config(const ModelGraph &g, const BitConfig &cfg);

// Activation bits for the output quantizer of an add node: those of the
// nearest weight layer upstream of its last input (32 if there is none).
int add_output_bits(const ModelGraph &g, const LayerNode &add, const BitConfig &cfg);

enum class RangeInit
{
  minmax,
  mse,
};

/**
 * Attaches quantizers to a (fused) FP32 graph: per-channel weight quantizers
 * from the weights, per-tensor input quantizers for weight layers and output
 * quantizers for add nodes from FP32 activations over `calib`.
 */
ModelGraph quantize_model(const ModelGraph &fp, const CalibrationSet &calib, const BitConfig &cfg, RangeInit init);

// The bits currently attached to each weight layer (32 where absent).
BitConfig bits_of(const ModelGraph &q);

} // namespace quantforge

#endif // QUANTFORGE_QUANT_MODEL_HPP
