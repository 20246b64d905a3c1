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

#ifndef QUANTFORGE_ADAQUANT_HPP
#define QUANTFORGE_ADAQUANT_HPP

#include "quantforge/quant_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace quantforge
{

/**
 * Layerwise calibration settings. Step learning rates apply to the quantizer
 * dynamic range step·(2^bits − 1); zero points share the rate of their step.
 */
struct AdaQuantConfig
{
  int iterations = 100;
  int batch_size = 50;
  float lr_weight = 1e-5f;
  float lr_bias = 1e-3f;
  float lr_input_step = 1e-1f;
  float lr_weight_step = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  uint64_t seed = 0;
  // Full-set MSE is checked every `eval_every` iterations to keep the best iterate.
  int eval_every = 10;

  void validate() const;
};

struct LayerCalibResult
{
  std::string layer_id;
  Tensor weight_delta; // V, so W_q = Q(W + V)
  Tensor bias_delta;   // V_b
  QuantParams weight_quant;
  QuantParams input_quant;
  double initial_mse = 0.0;
  double final_mse = 0.0;
  int best_iteration = 0;
};

/**
 * Minimizes ‖WX + b − Q(W+V)·Q(X') − (b+V_b)‖² over V, V_b and both
 * quantizers' steps and zero points with Adam, starting from V = 0 and the
 * node's current quantizers. X' is `inputs` (FP32 for the parallel flavor,
 * quantized predecessor outputs for the sequential one); the target uses the
 * FP32 `fp_inputs`. Returns the best iterate seen on the full input set.
 */
LayerCalibResult adaquant_layer(const LayerNode &layer, const Tensor &inputs, const Tensor &fp_inputs,
                                const AdaQuantConfig &cfg);
LayerCalibResult adaquant_layer(const LayerNode &layer, const Tensor &fp_inputs, const AdaQuantConfig &cfg);

// Layer with W+V, b+V_b and the calibrated quantizers.
LayerNode apply_calibration(const LayerNode &layer, const LayerCalibResult &r);
void apply_calibration(ModelGraph &g, const std::vector<LayerCalibResult> &results);

// Round-to-nearest output MSE of the layer's current quantizers (V = 0).
double layer_output_mse(const LayerNode &layer, const Tensor &inputs, const Tensor &fp_inputs);

/**
 * Every weight layer calibrated independently against its FP32 inputs. The
 * graph must be fused FP32; quantizers are initialized from `bits`.
 */
std::vector<LayerCalibResult> adaquant_parallel(const ModelGraph &fp, const CalibrationSet &calib,
                                                const BitConfig &bits, const AdaQuantConfig &cfg,
                                                RangeInit init = RangeInit::mse);

// Layers calibrated in order, each fed the outputs of the already calibrated predecessors.
std::vector<LayerCalibResult> adaquant_sequential(const ModelGraph &fp, const CalibrationSet &calib,
                                                  const BitConfig &bits, const AdaQuantConfig &cfg,
                                                  RangeInit init = RangeInit::mse);

/**
 * Smallest calibration size that is not over-parameterized: N for an fc with
 * N inputs; ceil(C_i·k² / (H·W)) with H×W the output size for a conv; at least 1.
 * `input_shape` is the per-sample input shape of the layer.
 */
int64_t min_calibration_size(const LayerNode &layer, const Shape &input_shape);

// round((Q(W+V) − Q(W)) / step) per weight, using the pre- and post-calibration quantizers.
std::vector<int> weight_code_shift(const LayerNode &before, const LayerCalibResult &r);

} // namespace quantforge

#endif // QUANTFORGE_ADAQUANT_HPP
