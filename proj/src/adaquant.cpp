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

#include "quantforge/adaquant.hpp"
#include "quantforge/adam.hpp"
#include "batch_cursor.hpp"

#include <algorithm>
#include <cmath>

namespace quantforge
{

namespace
{

struct LayerState
{
  Tensor weight_delta;
  Tensor bias_delta;
  QuantParams weight_quant;
  QuantParams input_quant;
};

Tensor weight_forward(const LayerNode &layer, const Tensor &x, const Tensor &w, const Tensor &b)
{
  return layer.kind == LayerKind::fc ? fc_forward(x, w, b) : conv2d(x, w, b, *layer.conv);
}

Tensor plus(const Tensor &a, const Tensor &b)
{
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] += b[i];
  return out;
}

Tensor state_forward(const LayerNode &layer, const LayerState &s, const Tensor &x)
{
  const Tensor wq = quantize(plus(layer.param("weight"), s.weight_delta), s.weight_quant);
  const Tensor xq = quantize(x, s.input_quant);
  return weight_forward(layer, xq, wq, plus(layer.param("bias"), s.bias_delta));
}

uint64_t layer_seed(uint64_t seed, const std::string &id)
{
  uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : id)
  {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class StepGroup
{
public:
  StepGroup(const QuantParams &q, float lr, const AdaQuantConfig &cfg)
      : _active(!q.passthrough()), _steps(q.channels(), lr / static_cast<float>(q.passthrough() ? 1 : q.levels()),
                                          cfg.beta1, cfg.beta2, cfg.adam_eps),
        _zeros(q.channels(), lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
  {
    for (float s : q.step)
      _frozen.push_back(s <= QuantParams::flat_step);
  }

  void step(QuantParams &q, const SteGrads &g)
  {
    if (!_active)
      return;
    std::vector<float> gs = g.grad_step, gz = g.grad_zero_point;
    for (size_t c = 0; c < gs.size(); ++c)
      if (_frozen[c])
        gs[c] = gz[c] = 0.0f;
    _steps.step(q.step, gs);
    _zeros.step(q.zero_point, gz);
    for (float &s : q.step)
      s = std::max(s, QuantParams::flat_step);
  }

private:
  bool _active;
  Adam _steps;
  Adam _zeros;
  std::vector<bool> _frozen;
};

} // namespace

void AdaQuantConfig::validate() const
{
  if (iterations < 1 || batch_size < 1 || eval_every < 1)
    throw Error("AdaQuant iterations, batch size and eval interval must be positive");
  for (float v : {lr_weight, lr_bias, lr_input_step, lr_weight_step, beta1, beta2, adam_eps})
    if (!(v > 0.0f))
      throw Error("AdaQuant rates and Adam constants must be positive");
}

double layer_output_mse(const LayerNode &layer, const Tensor &inputs, const Tensor &fp_inputs)
{
  const Tensor target = layer_forward(layer, fp_inputs);
  const Tensor wq = layer.weight_quant ? quantize(layer.param("weight"), *layer.weight_quant) : layer.param("weight");
  const Tensor xq = layer.input_quant ? quantize(inputs, *layer.input_quant) : inputs;
  return mse(weight_forward(layer, xq, wq, layer.param("bias")), target);
}

LayerCalibResult adaquant_layer(const LayerNode &layer, const Tensor &fp_inputs, const AdaQuantConfig &cfg)
{
  return adaquant_layer(layer, fp_inputs, fp_inputs, cfg);
}

LayerCalibResult adaquant_layer(const LayerNode &layer, const Tensor &inputs, const Tensor &fp_inputs,
                                const AdaQuantConfig &cfg)
{
  cfg.validate();
  if (!layer.has_weights())
    throw Error("AdaQuant needs an fc/conv2d layer, got '" + layer.id + "'");
  if (inputs.shape() != fp_inputs.shape())
    throw Error("AdaQuant inputs and FP inputs differ in shape for '" + layer.id + "'");

  const Tensor &w = layer.param("weight");
  const Tensor &b = layer.param("bias");
  LayerState state{Tensor(w.shape()), Tensor(b.shape()),
                   layer.weight_quant.value_or(QuantParams::passthrough_params()),
                   layer.input_quant.value_or(QuantParams::passthrough_params())};
  const Tensor target = layer_forward(layer, fp_inputs);

  LayerCalibResult result{layer.id, state.weight_delta, state.bias_delta, state.weight_quant, state.input_quant};
  result.initial_mse = result.final_mse = mse(state_forward(layer, state, inputs), target);
  if (!std::isfinite(result.initial_mse))
    throw Error("AdaQuant diverged on layer '" + layer.id + "': non-finite loss");
  if (result.initial_mse == 0.0)
    return result;

  auto consider = [&](double loss, int iteration) {
    if (loss < result.final_mse)
    {
      result.final_mse = loss;
      result.best_iteration = iteration;
      result.weight_delta = state.weight_delta;
      result.bias_delta = state.bias_delta;
      result.weight_quant = state.weight_quant;
      result.input_quant = state.input_quant;
    }
  };

  Adam adam_w(static_cast<size_t>(w.numel()), cfg.lr_weight, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam adam_b(static_cast<size_t>(b.numel()), cfg.lr_bias, cfg.beta1, cfg.beta2, cfg.adam_eps);
  StepGroup wq_group(state.weight_quant, cfg.lr_weight_step, cfg);
  StepGroup iq_group(state.input_quant, cfg.lr_input_step, cfg);
  detail::BatchCursor cursor(inputs.dim(0), cfg.batch_size, layer_seed(cfg.seed, layer.id));

  for (int it = 0; it < cfg.iterations; ++it)
  {
    const auto rows = cursor.next();
    const Tensor xb = cursor.full() ? inputs : inputs.gather_rows(rows);
    const Tensor tb = cursor.full() ? target : target.gather_rows(rows);

    const Tensor w_shift = plus(w, state.weight_delta);
    const Tensor wq = quantize(w_shift, state.weight_quant);
    const Tensor xq = quantize(xb, state.input_quant);
    const Tensor y = weight_forward(layer, xq, wq, plus(b, state.bias_delta));

    const double loss = mse(y, tb);
    if (!std::isfinite(loss))
      throw Error("AdaQuant diverged on layer '" + layer.id + "': non-finite loss");
    if (cursor.full())
      consider(loss, it);

    Tensor grad_y(y.shape());
    const double scale = 2.0 / static_cast<double>(y.numel());
    for (int64_t i = 0; i < y.numel(); ++i)
      grad_y[i] = static_cast<float>(scale * (static_cast<double>(y[i]) - tb[i]));

    auto kg = layer.kind == LayerKind::fc ? fc_backward(xq, wq, grad_y) : conv2d_backward(xq, wq, grad_y, *layer.conv);
    const auto wg = ste_backward(w_shift, state.weight_quant, kg.grad_w);
    const auto xg = ste_backward(xb, state.input_quant, kg.grad_x);

    adam_w.step(state.weight_delta.data(), wg.grad_x.data());
    adam_b.step(state.bias_delta.data(), kg.grad_b.data());
    wq_group.step(state.weight_quant, wg);
    iq_group.step(state.input_quant, xg);

    if (!cursor.full() && (it + 1) % cfg.eval_every == 0)
      consider(mse(state_forward(layer, state, inputs), target), it + 1);
  }
  consider(mse(state_forward(layer, state, inputs), target), cfg.iterations);
  return result;
}

LayerNode apply_calibration(const LayerNode &layer, const LayerCalibResult &r)
{
  if (layer.id != r.layer_id)
    throw Error("calibration result for '" + r.layer_id + "' applied to '" + layer.id + "'");
  LayerNode out = layer;
  out.param("weight") = plus(layer.param("weight"), r.weight_delta);
  out.param("bias") = plus(layer.param("bias"), r.bias_delta);
  out.weight_quant = r.weight_quant;
  out.input_quant = r.input_quant;
  return out;
}

void apply_calibration(ModelGraph &g, const std::vector<LayerCalibResult> &results)
{
  for (const auto &r : results)
  {
    auto &n = g.node(r.layer_id);
    n = apply_calibration(n, r);
  }
}

std::vector<LayerCalibResult> adaquant_parallel(const ModelGraph &fp, const CalibrationSet &calib,
                                                const BitConfig &bits, const AdaQuantConfig &cfg, RangeInit init)
{
  const ModelGraph q = quantize_model(fp, calib, bits, init);
  const auto fp_inputs = collect_inputs(strip_quantization(fp), calib.inputs);
  std::vector<LayerCalibResult> results;
  for (const auto &id : q.weight_layers())
    results.push_back(adaquant_layer(q.node(id), fp_inputs.at(id), cfg));
  return results;
}

std::vector<LayerCalibResult> adaquant_sequential(const ModelGraph &fp, const CalibrationSet &calib,
                                                  const BitConfig &bits, const AdaQuantConfig &cfg, RangeInit init)
{
  ModelGraph q = quantize_model(fp, calib, bits, init);
  const auto fp_inputs = collect_inputs(strip_quantization(fp), calib.inputs);
  std::vector<LayerCalibResult> results;
  for (const auto &id : q.weight_layers())
  {
    const auto &node = q.node(id);
    const Tensor quant_in = node.inputs[0] == graph_input_id ? calib.inputs : collect_inputs(q, calib.inputs).at(id);
    results.push_back(adaquant_layer(node, quant_in, fp_inputs.at(id), cfg));
    q.node(id) = apply_calibration(node, results.back());
  }
  return results;
}

int64_t min_calibration_size(const LayerNode &layer, const Shape &input_shape)
{
  if (layer.kind == LayerKind::fc)
    return std::max<int64_t>(1, layer.param("weight").dim(1));
  if (layer.kind != LayerKind::conv2d || !layer.conv)
    throw Error("min_calibration_size needs an fc/conv2d layer");
  if (input_shape.size() != 3)
    throw Error("conv input shape must be [C,H,W]");
  const auto &s = *layer.conv;
  const int64_t hw = s.output_dim(input_shape[1]) * s.output_dim(input_shape[2]);
  const int64_t params = s.in_channels * s.kernel * s.kernel;
  return std::max<int64_t>(1, (params + hw - 1) / hw);
}

std::vector<int> weight_code_shift(const LayerNode &before, const LayerCalibResult &r)
{
  if (!before.weight_quant || before.weight_quant->passthrough())
    throw Error("weight_code_shift needs a quantized layer");
  const Tensor &w = before.param("weight");
  const Tensor q0 = quantize(w, *before.weight_quant);
  const Tensor q1 = quantize(plus(w, r.weight_delta), r.weight_quant);
  const int64_t inner = w.numel() / w.dim(0);
  std::vector<int> shift(static_cast<size_t>(w.numel()));
  for (int64_t i = 0; i < w.numel(); ++i)
  {
    const float step = before.weight_quant->step[static_cast<size_t>(i / inner)];
    shift[static_cast<size_t>(i)] = static_cast<int>(std::lround((q1[i] - q0[i]) / step));
  }
  return shift;
}

} // namespace quantforge
