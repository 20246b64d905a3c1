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

#ifndef QUANTFORGE_BN_TUNER_HPP
#define QUANTFORGE_BN_TUNER_HPP

#include "quantforge/graph.hpp"

namespace quantforge
{

struct BnTuneConfig
{
  int iterations = 10; // full passes over the calibration set
  float momentum = 0.1f;
  int batch_size = 32;
  void validate() const;
};

// Id of the batch norm reconstructed after weight layer `layer_id`.
std::string reconstructed_bn_id(const std::string &layer_id);

/**
 * Inserts an identity batch norm after every weight layer carrying folded BN
 * parameters: μ = β_r = β_o, σ² = γ_o², γ_r = √(γ_o² + ε).
 */
ModelGraph reconstruct_bn(const ModelGraph &g);

/**
 * Re-estimates μ and σ² of every batch norm on `calib` with forward passes
 * only: sequential batches, running values updated after each batch by an
 * exponential moving average of the batch statistics (biased variance) and
 * used to normalize that batch downstream. σ² is floored at ε.
 */
ModelGraph tune_bn(const ModelGraph &g, const CalibrationSet &calib, const BnTuneConfig &cfg = {});

/**
 * Folds each batch norm back into its weight layer, rescaling the weights,
 * bias and the per-channel weight quantizer by r = γ_r/√(σ² + ε) so integer
 * weight codes are unchanged. Per-tensor weight quantization is rejected.
 */
ModelGraph refuse_bn(const ModelGraph &g);

// reconstruct → tune → refuse.
ModelGraph bn_tune(const ModelGraph &g, const CalibrationSet &calib, const BnTuneConfig &cfg = {});

} // namespace quantforge

#endif // QUANTFORGE_BN_TUNER_HPP
