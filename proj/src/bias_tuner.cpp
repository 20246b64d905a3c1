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

#include "quantforge/bias_tuner.hpp"
#include "quantforge/metrics.hpp"
#include "batch_cursor.hpp"

#include <cmath>

namespace quantforge
{

void BiasTuneConfig::validate() const
{
  if (iterations < 0 || batch_size < 1 || eval_every < 1)
    throw Error("bias tuning needs non-negative iterations, positive batch size and eval interval");
  if (!(lr > 0.0f))
    throw Error("bias tuning learning rate must be positive");
}

BiasTuneResult bias_tune(const ModelGraph &student, const ModelGraph &teacher, const CalibrationSet &calib,
                         const BiasTuneConfig &cfg)
{
  cfg.validate();
  calib.validate();
  const Tensor target = forward_batched(teacher, calib.inputs);
  auto full_loss = [&](const ModelGraph &g) {
    const double l = kd_loss(target, forward_batched(g, calib.inputs));
    if (!std::isfinite(l))
      throw Error("bias tuning diverged: non-finite distillation loss");
    return l;
  };

  BiasTuneResult r{student, 0.0, 0.0, 0, {}};
  r.initial_loss = r.final_loss = full_loss(student);
  ModelGraph g = student;
  auto consider = [&](int iteration) {
    const double l = full_loss(g);
    if (l < r.final_loss)
    {
      r.final_loss = l;
      r.best_iteration = iteration;
      r.model = g;
    }
  };

  detail::BatchCursor cursor(calib.size(), cfg.batch_size, cfg.seed);
  for (int it = 0; it < cfg.iterations; ++it)
  {
    const auto rows = cursor.next();
    const Tensor xb = cursor.full() ? calib.inputs : calib.inputs.gather_rows(rows);
    const Tensor tb = cursor.full() ? target : target.gather_rows(rows);
    const ForwardTrace trace = forward_trace(g, xb);
    const double loss = kd_loss(tb, trace.result());
    if (!std::isfinite(loss))
      throw Error("bias tuning diverged: non-finite distillation loss");
    r.batch_losses.push_back(loss);

    const ParamGrads grads = backward(g, trace, kd_loss_grad(tb, trace.result()), TrainableSet::biases);
    for (const auto &[id, params] : grads)
    {
      Tensor &bias = g.node(id).param("bias");
      const Tensor &grad = params.at("bias");
      for (int64_t i = 0; i < bias.numel(); ++i)
        bias[i] -= cfg.lr * grad[i];
    }
    if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations)
      consider(it + 1);
  }
  return r;
}

} // namespace quantforge
