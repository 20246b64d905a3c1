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

#include "quantforge/quant_model.hpp"

namespace quantforge
{

namespace
{

QuantParams init_params(const Tensor &x, int bits, Granularity g, RangeInit init)
{
  return init == RangeInit::mse ? calibrate_step_mse(x, bits, g) : init_minmax(x, bits, g);
}

bool valid_bits(int b) { return (b >= 2 && b <= 8) || b == QuantParams::passthrough_bits; }

} // namespace

BitConfig uniform_bits(const ModelGraph &g, int bits)
{
  BitConfig cfg;
  for (const auto &id : g.weight_layers())
    cfg[id] = {bits, bits};
  return cfg;
}

BitConfig with_exemptions(const ModelGraph &g, BitConfig cfg, int base_bits)
{
  const auto ids = g.weight_layers();
  if (!ids.empty())
  {
    cfg[ids.front()] = {base_bits, base_bits};
    cfg[ids.back()] = {base_bits, base_bits};
  }
  return cfg;
}

void validate_bit_config(const ModelGraph &g, const BitConfig &cfg)
{
  for (const auto &id : g.weight_layers())
  {
    auto it = cfg.find(id);
    if (it == cfg.end())
      throw Error("bit config does not cover layer '" + id + "'");
    if (!valid_bits(it->second.weight_bits) || !valid_bits(it->second.act_bits))
      throw Error("bit config for '" + id + "' outside the allowed set");
  }
  for (const auto &[id, bits] : cfg)
    if (!g.contains(id) || !g.node(id).has_weights())
      throw Error("bit config names unknown weight layer '" + id + "'");
}

int add_output_bits(const ModelGraph &g, const LayerNode &add, const BitConfig &cfg)
{
  std::string cur = add.inputs.back();
  while (cur != graph_input_id)
  {
    const auto &n = g.node(cur);
    if (n.has_weights())
    {
      auto it = cfg.find(n.id);
      return it == cfg.end() ? QuantParams::passthrough_bits : it->second.act_bits;
    }
    cur = n.inputs.back();
  }
  return QuantParams::passthrough_bits;
}

ModelGraph quantize_model(const ModelGraph &fp, const CalibrationSet &calib, const BitConfig &cfg, RangeInit init)
{
  validate_bit_config(fp, cfg);
  ModelGraph q = strip_quantization(fp);
  const auto trace = forward_trace(q, calib.inputs);
  auto raw_input = [&](const LayerNode &n) -> const Tensor & {
    return n.inputs[0] == graph_input_id ? trace.input : trace.outputs[q.index_of(n.inputs[0])];
  };
  for (size_t i = 0; i < q.nodes.size(); ++i)
  {
    auto &n = q.nodes[i];
    if (n.has_weights())
    {
      const auto bits = cfg.at(n.id);
      n.weight_quant = init_params(n.param("weight"), bits.weight_bits, Granularity::per_channel, init);
      n.input_quant = init_params(raw_input(n), bits.act_bits, Granularity::per_tensor, init);
    }
    else if (n.kind == LayerKind::add)
      n.output_quant = init_params(trace.outputs[i], add_output_bits(fp, n, cfg), Granularity::per_tensor, init);
  }
  return q;
}

BitConfig bits_of(const ModelGraph &q)
{
  BitConfig cfg;
  for (const auto &n : q.nodes)
    if (n.has_weights())
      cfg[n.id] = {n.weight_quant ? n.weight_quant->bits : QuantParams::passthrough_bits,
                   n.input_quant ? n.input_quant->bits : QuantParams::passthrough_bits};
  return cfg;
}

} // namespace quantforge
