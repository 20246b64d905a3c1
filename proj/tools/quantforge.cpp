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

#include "quantforge/archive.hpp"
#include "quantforge/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace quantforge;

namespace
{

std::string read_file(const std::string &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string &path, const std::string &text)
{
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text))
    throw Error("cannot write '" + path + "'");
}

// "4,8", "2..8" or a mix such as "2..4,8".
std::vector<int> parse_bits(const std::string &spec)
{
  std::vector<int> bits;
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ',');)
    try
    {
      const auto dots = part.find("..");
      if (dots == std::string::npos)
        bits.push_back(std::stoi(part));
      else
        for (int b = std::stoi(part.substr(0, dots)), e = std::stoi(part.substr(dots + 2)); b <= e; ++b)
          bits.push_back(b);
    }
    catch (const std::exception &)
    {
      throw Error("bad bit list '" + spec + "'");
    }
  std::sort(bits.begin(), bits.end());
  bits.erase(std::unique(bits.begin(), bits.end()), bits.end());
  if (bits.empty())
    throw Error("empty bit list");
  return bits;
}

/**
 * Bit configuration from an integer (uniform) or a JSON file mapping layer
 * ids to bits, either an integer or {"k": .., "n": ..}; "*" sets the default.
 */
BitConfig load_bits(const std::string &arg, const ModelGraph &g)
{
  if (!arg.empty() && std::all_of(arg.begin(), arg.end(), ::isdigit))
    return uniform_bits(g, std::stoi(arg));
  nlohmann::json j;
  try
  {
    j = nlohmann::json::parse(read_file(arg));
  }
  catch (const nlohmann::json::exception &e)
  {
    throw Error("malformed bit config '" + arg + "': " + e.what());
  }
  auto entry = [&](const nlohmann::json &v) -> LayerBits {
    if (v.is_number_integer())
      return {v.get<int>(), v.get<int>()};
    if (v.is_object() && v.contains("k") && v.contains("n"))
      return {v.at("k").get<int>(), v.at("n").get<int>()};
    throw Error("bit config entries must be an integer or {\"k\":..,\"n\":..}");
  };
  BitConfig cfg;
  if (j.contains("*"))
    for (const auto &id : g.weight_layers())
      cfg[id] = entry(j.at("*"));
  for (const auto &[id, v] : j.items())
    if (id != "*")
    {
      if (!g.contains(id) || !g.node(id).has_weights())
        throw Error("bit config names unknown weight layer '" + id + "'");
      cfg[id] = entry(v);
    }
  validate_bit_config(g, cfg);
  return cfg;
}

uint64_t seed_or_env(uint64_t seed)
{
  PipelineConfig p;
  p.set_seed(seed);
  return with_env_seed(p).adaquant.seed;
}

void emit(const std::string &path, const std::string &text)
{
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_file(path, text);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"quantforge: post-training quantization toolkit"};
  app.require_subcommand(1);

  std::string model, calib, out, bits_arg = "4", mode = "parallel", report, table_path, teacher, holdout;
  std::string bits_list = "4,8";
  double budget = 0.0, target_ratio = 0.0;
  int iterations = -1, base_bits = 8;
  uint64_t seed = 0;
  bool relaxed = false, no_exempt = false;

  auto *adaquant = app.add_subcommand("adaquant", "layerwise AdaQuant calibration");
  adaquant->add_option("--model", model, "FP32 model archive")->required();
  adaquant->add_option("--calib", calib, "calibration archive")->required();
  adaquant->add_option("--bits", bits_arg, "uniform bits or a JSON bit config")->required();
  adaquant->add_option("--mode", mode, "parallel|sequential")->check(CLI::IsMember({"parallel", "sequential"}));
  adaquant->add_option("--iters", iterations, "optimizer iterations per layer");
  adaquant->add_option("--seed", seed, "batch order seed");
  adaquant->add_option("--report", report, "per-layer MSE CSV (default stdout)");
  adaquant->add_option("--out", out, "output archive")->required();

  auto *profile = app.add_subcommand("profile", "measure per-layer sensitivity table");
  profile->add_option("--model", model, "FP32 model archive")->required();
  profile->add_option("--calib", calib, "calibration archive")->required();
  profile->add_option("--bits", bits_list, "candidate bits, e.g. 4,8 or 2..8");
  profile->add_option("--base-bits", base_bits, "base precision");
  profile->add_option("--mode", mode, "light (quant-init) or advanced (AdaQuant) layers")
      ->check(CLI::IsMember({"light", "advanced"}));
  profile->add_flag("--no-exempt", no_exempt, "allow lowering the first and last layers");
  profile->add_option("--out", out, "CSV path (default stdout)");

  auto *allocate = app.add_subcommand("allocate", "solve the bit allocation integer program");
  allocate->add_option("--table", table_path, "sensitivity CSV (layer,k,n,dloss,dperf)")->required();
  auto *budget_opt = allocate->add_option("--budget", budget, "loss budget");
  auto *ratio_opt = allocate->add_option("--target-ratio", target_ratio, "target compression ratio");
  budget_opt->excludes(ratio_opt);
  allocate->add_option("--bits", bits_list, "allowed bits, e.g. 4,8 or 2..8");
  allocate->add_option("--base-bits", base_bits, "base precision of the table");
  allocate->add_option("--model", model, "model archive supplying parameter counts");
  allocate->add_option("--out", out, "JSON bit config path (default stdout)");

  auto *bn = app.add_subcommand("bn-tune", "reconstruct, re-estimate and re-fuse batch norms");
  bn->add_option("--model", model, "quantized model archive")->required();
  bn->add_option("--calib", calib, "calibration archive")->required();
  bn->add_option("--iters", iterations, "passes over the calibration set");
  bn->add_option("--out", out, "output archive")->required();

  auto *bias = app.add_subcommand("bias-tune", "distill biases towards the FP32 teacher");
  bias->add_option("--model", model, "quantized model archive")->required();
  bias->add_option("--teacher", teacher, "FP32 teacher archive")->required();
  bias->add_option("--calib", calib, "calibration archive")->required();
  bias->add_option("--iters", iterations, "SGD iterations");
  bias->add_option("--seed", seed, "batch order seed");
  bias->add_option("--out", out, "output archive")->required();

  auto *pipe = app.add_subcommand("pipeline", "run the light or advanced pipeline end to end");
  pipe->add_option("--mode", mode, "light|advanced")->required()->check(CLI::IsMember({"light", "advanced"}));
  pipe->add_option("--model", model, "FP32 model archive")->required();
  pipe->add_option("--calib", calib, "calibration archive")->required();
  auto *pipe_ratio = pipe->add_option("--target-ratio", target_ratio, "target compression ratio");
  auto *pipe_budget = pipe->add_option("--budget", budget, "loss budget");
  pipe_ratio->excludes(pipe_budget);
  pipe->add_flag("--relaxed-bits", relaxed, "allow any bit-width in 2..8");
  pipe->add_flag("--no-exempt", no_exempt, "allow lowering the first and last layers");
  pipe->add_option("--seed", seed, "seed for AdaQuant and bias tuning");
  pipe->add_option("--holdout", holdout, "held-out archive for reporting");
  pipe->add_option("--report", report, "report path (.json, otherwise per-layer CSV)")->required();
  pipe->add_option("--out", out, "output archive")->required();

  CLI11_PARSE(app, argc, argv);

  try
  {
    if (adaquant->parsed())
    {
      const ModelGraph fused = fuse_conv_bn(strip_quantization(load_model(model)));
      const CalibrationSet set = load_calibration(calib);
      const BitConfig bits = load_bits(bits_arg, fused);
      AdaQuantConfig cfg;
      if (iterations >= 0)
        cfg.iterations = iterations;
      cfg.seed = seed_or_env(seed);
      const auto results = mode == "sequential" ? adaquant_sequential(fused, set, bits, cfg)
                                                : adaquant_parallel(fused, set, bits, cfg);
      ModelGraph q = quantize_model(fused, set, bits, RangeInit::mse);
      apply_calibration(q, results);
      save_model(q, out);
      std::string csv = "layer,k,n,mse_before,mse_after,best_iteration\n";
      for (const auto &r : results)
      {
        char row[256];
        std::snprintf(row, sizeof row, "%s,%d,%d,%.9g,%.9g,%d\n", r.layer_id.c_str(), bits.at(r.layer_id).weight_bits,
                      bits.at(r.layer_id).act_bits, r.initial_mse, r.final_mse, r.best_iteration);
        csv += row;
      }
      emit(report, csv);
    }
    else if (profile->parsed())
    {
      const ModelGraph g = strip_quantization(load_model(model));
      const ModelGraph fused = fuse_conv_bn(g);
      const CalibrationSet set = load_calibration(calib);
      const std::vector<int> bits = parse_bits(bits_list);
      AdaQuantConfig aq;
      aq.seed = seed_or_env(0);
      PrecisionVariants variants;
      std::vector<int> all = bits;
      all.push_back(base_bits);
      for (int b : all)
      {
        if (variants.count(b))
          continue;
        const RangeInit init = mode == "advanced" ? RangeInit::mse : RangeInit::minmax;
        ModelGraph v = quantize_model(fused, set, uniform_bits(fused, b), init);
        if (mode == "advanced")
          apply_calibration(v, adaquant_parallel(fused, set, uniform_bits(fused, b), aq, init));
        variants.emplace(b, std::move(v));
      }
      const Tensor t = forward_batched(g, set.inputs);
      const LossFn loss = [&](const ModelGraph &m) { return kd_loss(t, forward_batched(m, set.inputs)); };
      const auto table = profile_sensitivity(variants, base_bits, bits, loss,
                                             no_exempt ? std::vector<std::string>{} : exempt_layers(fused));
      emit(out, table.to_csv());
    }
    else if (allocate->parsed())
    {
      SensitivityTable table = SensitivityTable::from_csv(read_file(table_path), base_bits);
      if (!model.empty())
      {
        const ModelGraph g = fuse_conv_bn(strip_quantization(load_model(model)));
        for (auto &layer : table.layers)
          layer.params = g.node(layer.id).weight_count();
      }
      const std::vector<int> allowed = parse_bits(bits_list + "," + std::to_string(base_bits));
      Allocation a;
      if (*ratio_opt)
      {
        for (const auto &layer : table.layers)
          if (layer.params <= 0)
            throw Error("parameter count of '" + layer.id + "' unknown; pass --model");
        a = solve_ip_for_ratio(table, target_ratio, allowed);
      }
      else
        a = solve_ip(table, *budget_opt ? budget : 0.0, allowed);
      nlohmann::json j;
      for (const auto &[id, b] : a.bits)
        j[id] = {{"k", b.weight_bits}, {"n", b.act_bits}};
      emit(out, j.dump(2) + "\n");
      std::fprintf(stderr, "total dloss %.9g  total dperf %.9g", a.dloss, a.dperf);
      if (std::all_of(table.layers.begin(), table.layers.end(), [](const auto &l) { return l.params > 0; }))
        std::fprintf(stderr, "  compression ratio %.6f", compression_ratio(table, a.bits));
      std::fprintf(stderr, "\n");
    }
    else if (bn->parsed())
    {
      BnTuneConfig cfg;
      if (iterations >= 0)
        cfg.iterations = iterations;
      save_model(bn_tune(load_model(model), load_calibration(calib), cfg), out);
    }
    else if (bias->parsed())
    {
      BiasTuneConfig cfg;
      if (iterations >= 0)
        cfg.iterations = iterations;
      cfg.seed = seed_or_env(seed);
      const auto r = bias_tune(load_model(model), load_model(teacher), load_calibration(calib), cfg);
      save_model(r.model, out);
      std::fprintf(stderr, "kd loss %.9g -> %.9g (best iteration %d)\n", r.initial_loss, r.final_loss,
                   r.best_iteration);
    }
    else if (pipe->parsed())
    {
      PipelineConfig cfg;
      cfg.mode = pipeline_mode_from_string(mode);
      if (relaxed)
        cfg.low_bits = PipelineConfig::relaxed_bits();
      if (*pipe_ratio)
        cfg.target_ratio = target_ratio;
      if (*pipe_budget)
        cfg.budget = budget;
      cfg.exempt_first_last = !no_exempt;
      cfg.set_seed(seed);
      std::optional<CalibrationSet> held;
      if (!holdout.empty())
        held = load_calibration(holdout);
      const auto r = run_pipeline(load_model(model), load_calibration(calib), cfg, held ? &*held : nullptr);
      save_model(r.model, out);
      const bool json = report.size() >= 5 && report.compare(report.size() - 5, 5, ".json") == 0;
      write_file(report, json ? r.report.to_json() : r.report.layers_csv());
      std::fprintf(stderr, "%s pipeline: compression ratio %.6f, calibration kd %.6g\n", mode.c_str(),
                   r.report.compression_ratio, r.report.calibration.loss);
    }
  }
  catch (const std::exception &e)
  {
    std::fprintf(stderr, "quantforge: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
