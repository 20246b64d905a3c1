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

#ifndef QUANTFORGE_METRICS_HPP
#define QUANTFORGE_METRICS_HPP

#include "quantforge/graph.hpp"

#include <optional>

namespace quantforge
{

// Row-wise softmax of a [B × K] tensor.
Tensor softmax(const Tensor &logits);

/**
 * Label-free distillation loss between teacher and student outputs, averaged
 * over the batch. Classification-shaped outputs ([B × K], K ≥ 2) use
 * KL(softmax(teacher) ‖ softmax(student)), i.e. the cross-entropy minus the
 * teacher entropy, so a model scored against itself gets exactly 0. Other
 * output shapes use the mean squared error.
 */
double kd_loss(const Tensor &teacher, const Tensor &student);
// d kd_loss / d student.
Tensor kd_loss_grad(const Tensor &teacher, const Tensor &student);

double cross_entropy(const Tensor &logits, const std::vector<int64_t> &labels);
std::vector<int64_t> argmax_rows(const Tensor &logits);
double top1(const Tensor &logits, const std::vector<int64_t> &labels);

struct MetricsReport
{
  double loss = 0.0;
  std::optional<double> top1;             // vs labels, when present
  std::optional<double> teacher_agreement; // argmax agreement with the reference outputs
};

/**
 * Scores `g` on the calibration set. With reference outputs the loss is the
 * distillation loss against them; otherwise it is the true-label
 * cross-entropy, which requires labels.
 */
MetricsReport evaluate(const ModelGraph &g, const CalibrationSet &calib, const Tensor *reference_outputs = nullptr);

// Forward in row chunks, concatenated in order.
Tensor forward_batched(const ModelGraph &g, const Tensor &inputs, int64_t chunk = 256);

} // namespace quantforge

#endif // QUANTFORGE_METRICS_HPP
