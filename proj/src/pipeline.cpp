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

#include "quantforge/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>

namespace quantforge
{

namespace
{

bool all_passthrough(const BitConfig &bits)
{
  return std::all_of(bits.begin(), bits.end(), [](const auto &kv) {
    return kv.second.weight_bits == QuantParams::passthrough_bits &&
           kv.second.act_bits == QuantParams::passthrough_bits;
  });
}

std::vector<int> choice_bits(const PipelineConfig &cfg)
{
  std::vector<int> bits = cfg.low_bits;
  bits.push_back(cfg.base_bits);
  std::sort(bits.begin(), bits.end());
  bits.erase(std::unique(bits.begin(), bits.end()), bits.end());
  return bits;
}

nlohmann::json metrics_json(const MetricsReport &m)
{
  nlohmann::json j{{"kd_loss", m.loss}};
  if (m.top1)
    j["top1"] = *m.top1;
  if (m.teacher_agreement)
    j["teacher_agreement"] = *m.teacher_agreement;
  return j;
}

std::string num(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

PipelineResult run(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &raw_cfg,
                   const CalibrationSet *holdout, PipelineMode mode)
{
  PipelineConfig cfg = with_env_seed(raw_cfg);
  cfg.mode = mode;
  cfg.validate();
  calib.validate();

  const ModelGraph teacher = strip_quantization(g);
  const ModelGraph fused = fuse_conv_bn(teacher);
  const Tensor teacher_calib = forward_batched(teacher, calib.inputs);
  auto calib_loss = [&](const ModelGraph &m) { return kd_loss(teacher_calib, forward_batched(m, calib.inputs)); };

  PipelineReport report;
  report.mode = mode;
  report.budget = cfg.budget;
  report.target_ratio = cfg.target_ratio;

  const RangeInit init = mode == PipelineMode::light ? cfg.light_init : cfg.advanced_init;
  PrecisionVariants variants;
  for (int b : choice_bits(cfg))
  {
    const BitConfig bits = uniform_bits(fused, b);
    ModelGraph v = quantize_model(fused, calib, bits, init);
    if (mode == PipelineMode::advanced)
      apply_calibration(v, adaquant_parallel(fused, calib, bits, cfg.adaquant, init));
    variants.emplace(b, std::move(v));
  }

  const auto exempt = cfg.exempt_first_last ? exempt_layers(fused) : std::vector<std::string>{};
  report.table = profile_sensitivity(variants, cfg.base_bits, cfg.low_bits, calib_loss, exempt);
  const Allocation alloc = cfg.target_ratio ? solve_ip_for_ratio(report.table, *cfg.target_ratio)
                                            : solve_ip(report.table, cfg.budget.value_or(0.0));

  ModelGraph model = stitch(variants, alloc.bits);
  report.stages.emplace_back(mode == PipelineMode::light ? "quant_init" : "adaquant", calib_loss(model));
  if (!all_passthrough(alloc.bits))
  {
    const bool has_bn = std::any_of(model.nodes.begin(), model.nodes.end(),
                                    [](const LayerNode &n) { return n.folded_bn.has_value(); });
    if (cfg.bn_tuning && has_bn)
    {
      model = bn_tune(model, calib, cfg.bn);
      report.stages.emplace_back("bn_tuning", calib_loss(model));
    }
    if (mode == PipelineMode::advanced && cfg.bias_tuning)
    {
      model = bias_tune(model, teacher, calib, cfg.bias).model;
      report.stages.emplace_back("bias_tuning", calib_loss(model));
    }
  }

  report.compression_ratio = compression_ratio(model, alloc.bits);
  report.total_dloss = alloc.dloss;
  report.total_dperf = alloc.dperf;
  for (const auto &layer : report.table.layers)
  {
    const LayerBits b = alloc.bits.at(layer.id);
    LayerReport row{layer.id, layer.params, b.weight_bits, b.act_bits, 0.0, 0.0};
    for (const auto &c : layer.choices)
      if (c.weight_bits == b.weight_bits && c.act_bits == b.act_bits)
      {
        row.dloss = c.dloss;
        row.dperf = c.dperf;
      }
    report.layers.push_back(row);
  }
  report.calibration = evaluate(model, calib, &teacher_calib);
  if (holdout)
  {
    const Tensor teacher_holdout = forward_batched(teacher, holdout->inputs);
    report.holdout = evaluate(model, *holdout, &teacher_holdout);
  }
  return {std::move(model), alloc.bits, std::move(report)};
}

} // namespace

std::string to_string(PipelineMode m) { return m == PipelineMode::light ? "light" : "advanced"; }

PipelineMode pipeline_mode_from_string(const std::string &s)
{
  if (s == "light")
    return PipelineMode::light;
  if (s == "advanced")
    return PipelineMode::advanced;
  throw Error("unknown pipeline mode '" + s + "' (expected light or advanced)");
}

void PipelineConfig::set_seed(uint64_t seed)
{
  adaquant.seed = seed;
  bias.seed = seed;
}

void PipelineConfig::validate() const
{
  if (budget && target_ratio)
    throw Error("pipeline takes a loss budget or a target ratio, not both");
  if (budget && !(*budget >= 0.0))
    throw Error("pipeline loss budget must be non-negative");
  if (target_ratio && !(*target_ratio > 0.0))
    throw Error("pipeline target ratio must be positive");
  if (low_bits.empty())
    throw Error("pipeline needs at least one low bit-width");
  for (int b : choice_bits(*this))
    if (b != QuantParams::passthrough_bits && (b < 2 || b > 8))
      throw Error("pipeline bit-widths must be in [2,8] or 32, got " + std::to_string(b));
  adaquant.validate();
  bn.validate();
  bias.validate();
}

PipelineConfig with_env_seed(PipelineConfig cfg)
{
  if (const char *s = std::getenv("QUANTFORGE_SEED"); s && *s)
  {
    char *end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0')
      throw Error(std::string("QUANTFORGE_SEED is not an unsigned integer: '") + s + "'");
    cfg.set_seed(v);
  }
  return cfg;
}

std::vector<std::string> exempt_layers(const ModelGraph &g)
{
  const auto layers = g.weight_layers();
  if (layers.empty())
    return {};
  if (layers.size() == 1)
    return {layers.front()};
  return {layers.front(), layers.back()};
}

std::string PipelineReport::to_json() const
{
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["budget"] = budget ? nlohmann::json(*budget) : nlohmann::json(nullptr);
  j["target_ratio"] = target_ratio ? nlohmann::json(*target_ratio) : nlohmann::json(nullptr);
  j["compression_ratio"] = compression_ratio;
  j["total_dloss"] = total_dloss;
  j["total_dperf"] = total_dperf;
  j["reference_loss"] = table.reference_loss;
  j["layers"] = nlohmann::json::array();
  for (const auto &l : layers)
    j["layers"].push_back({{"layer", l.id},
                           {"params", l.params},
                           {"k", l.weight_bits},
                           {"n", l.act_bits},
                           {"dloss", std::isfinite(l.dloss) ? nlohmann::json(l.dloss) : nlohmann::json("inf")},
                           {"dperf", l.dperf}});
  j["stages"] = nlohmann::json::array();
  for (const auto &[name, loss] : stages)
    j["stages"].push_back({{"stage", name}, {"calibration_kd_loss", loss}});
  j["calibration"] = metrics_json(calibration);
  if (holdout)
    j["holdout"] = metrics_json(*holdout);
  j["sensitivity_csv"] = table.to_csv();
  return j.dump(2) + "\n";
}

std::string PipelineReport::layers_csv() const
{
  std::string out = "layer,params,k,n,dloss,dperf\n";
  for (const auto &l : layers)
    out += l.id + "," + std::to_string(l.params) + "," + std::to_string(l.weight_bits) + "," +
           std::to_string(l.act_bits) + "," + num(l.dloss) + "," + num(l.dperf) + "\n";
  return out;
}

std::string sweep_csv(const std::vector<PipelineReport> &reports)
{
  std::string out =
      "mode,target_ratio,budget,compression_ratio,calib_kd,calib_agreement,holdout_top1,holdout_agreement\n";
  auto opt = [](const std::optional<double> &v) { return v ? num(*v) : std::string(); };
  for (const auto &r : reports)
    out += to_string(r.mode) + "," + opt(r.target_ratio) + "," + opt(r.budget) + "," + num(r.compression_ratio) + "," +
           num(r.calibration.loss) + "," + opt(r.calibration.teacher_agreement) + "," +
           (r.holdout ? opt(r.holdout->top1) : "") + "," + (r.holdout ? opt(r.holdout->teacher_agreement) : "") + "\n";
  return out;
}

PipelineResult run_light(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &cfg,
                         const CalibrationSet *holdout)
{
  return run(g, calib, cfg, holdout, PipelineMode::light);
}

PipelineResult run_advanced(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &cfg,
                            const CalibrationSet *holdout)
{
  return run(g, calib, cfg, holdout, PipelineMode::advanced);
}

PipelineResult run_pipeline(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &cfg,
                            const CalibrationSet *holdout)
{
  return run(g, calib, cfg, holdout, cfg.mode);
}

} // namespace quantforge
