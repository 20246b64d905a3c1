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

#ifndef QUANTFORGE_PIPELINE_HPP
#define QUANTFORGE_PIPELINE_HPP

#include "quantforge/adaquant.hpp"
#include "quantforge/allocator.hpp"
#include "quantforge/bias_tuner.hpp"
#include "quantforge/bn_tuner.hpp"
#include "quantforge/metrics.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace quantforge
{

enum class PipelineMode
{
  light,    // quant-init → IP → BN tuning; forward passes only
  advanced, // adds per-precision AdaQuant before the IP and bias tuning at the end
};

std::string to_string(PipelineMode m);
PipelineMode pipeline_mode_from_string(const std::string &s);

struct PipelineConfig
{
  PipelineMode mode = PipelineMode::light;
  int base_bits = 8;
  std::vector<int> low_bits = {4, 8};
  // Exactly one of these may be set; neither means a zero loss budget.
  std::optional<double> budget;
  std::optional<double> target_ratio;
  bool exempt_first_last = true;
  RangeInit light_init = RangeInit::minmax;
  RangeInit advanced_init = RangeInit::mse;
  bool bn_tuning = true;
  bool bias_tuning = true;
  AdaQuantConfig adaquant;
  BnTuneConfig bn;
  BiasTuneConfig bias;

  static std::vector<int> relaxed_bits() { return {2, 3, 4, 5, 6, 7, 8}; }
  void set_seed(uint64_t seed);
  void validate() const;
};

// Applies QUANTFORGE_SEED, when set, to every seed in `cfg`.
PipelineConfig with_env_seed(PipelineConfig cfg);

struct LayerReport
{
  std::string id;
  int64_t params = 0;
  int weight_bits = 0;
  int act_bits = 0;
  double dloss = 0.0;
  double dperf = 0.0;
};

struct PipelineReport
{
  PipelineMode mode = PipelineMode::light;
  std::optional<double> budget;
  std::optional<double> target_ratio;
  double compression_ratio = 0.0;
  double total_dloss = 0.0;
  double total_dperf = 0.0;
  SensitivityTable table;
  std::vector<LayerReport> layers;
  // Calibration-set distillation loss after each stage, in order.
  std::vector<std::pair<std::string, double>> stages;
  MetricsReport calibration;
  std::optional<MetricsReport> holdout;

  std::string to_json() const;
  // One row per weight layer: layer,params,k,n,dloss,dperf.
  std::string layers_csv() const;
};

// One row per report: mode,target_ratio,budget,compression_ratio,calib_kd,calib_agreement,holdout_top1,holdout_agreement.
std::string sweep_csv(const std::vector<PipelineReport> &reports);

struct PipelineResult
{
  ModelGraph model;
  BitConfig bits;
  PipelineReport report;
};

/**
 * `g` is the FP32 model (with or without batch norms); it is also the
 * distillation teacher. `holdout`, when given, is only used for reporting.
 */
PipelineResult run_light(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &cfg,
                         const CalibrationSet *holdout = nullptr);
PipelineResult run_advanced(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &cfg,
                            const CalibrationSet *holdout = nullptr);
// Dispatches on cfg.mode.
PipelineResult run_pipeline(const ModelGraph &g, const CalibrationSet &calib, const PipelineConfig &cfg,
                            const CalibrationSet *holdout = nullptr);

// First and last weight layers.
std::vector<std::string> exempt_layers(const ModelGraph &g);

} // namespace quantforge

#endif // QUANTFORGE_PIPELINE_HPP
