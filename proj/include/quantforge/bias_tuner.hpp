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

#ifndef QUANTFORGE_BIAS_TUNER_HPP
#define QUANTFORGE_BIAS_TUNER_HPP

#include "quantforge/graph.hpp"

#include <cstdint>
#include <vector>

namespace quantforge
{

struct BiasTuneConfig
{
  int iterations = 200;
  float lr = 0.1f; // plain SGD
  int batch_size = 50;
  uint64_t seed = 0;
  // Full-set distillation loss is checked every `eval_every` iterations to keep the best iterate.
  int eval_every = 10;
  void validate() const;
};

struct BiasTuneResult
{
  ModelGraph model;
  double initial_loss = 0.0; // calibration-set distillation loss
  double final_loss = 0.0;   // of the returned (best) iterate
  int best_iteration = 0;
  std::vector<double> batch_losses; // one per iteration
};

/**
 * Label-free distillation of the quantized `student` towards `teacher` on
 * `calib`, training fc/conv2d biases only; gradients pass activation
 * quantizers straight-through.
 */
BiasTuneResult bias_tune(const ModelGraph &student, const ModelGraph &teacher, const CalibrationSet &calib,
                         const BiasTuneConfig &cfg = {});

} // namespace quantforge

#endif // QUANTFORGE_BIAS_TUNER_HPP
