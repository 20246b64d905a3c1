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

#ifndef QUANTFORGE_ALLOCATOR_HPP
#define QUANTFORGE_ALLOCATOR_HPP

#include "quantforge/quant_model.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace quantforge
{

struct ChoiceEntry
{
  int weight_bits = 8;
  int act_bits = 8;
  double dloss = 0.0; // +inf marks a choice that must never be selected
  double dperf = 0.0;
};

struct LayerChoices
{
  std::string id;
  int64_t params = 0; // weight count, for compression ratios
  std::vector<ChoiceEntry> choices;
};

/**
 * Per-layer (ΔLoss, ΔPerf) of lowering one layer at a time from the base
 * precision. Layers are in graph order; each has exactly one base choice
 * with ΔL = ΔP = 0.
 */
struct SensitivityTable
{
  int base_bits = 8;
  double reference_loss = 0.0;
  std::vector<LayerChoices> layers;

  void validate() const;
  // CSV with header `layer,k,n,dloss,dperf`, one row per choice.
  std::string to_csv() const;
  // Parameter counts are recovered from ΔP = N·(base − k) where possible.
  static SensitivityTable from_csv(const std::string &text, int base_bits = 8);
};

// Σ N·k / (32·Σ N) over weight layers.
double compression_ratio(const ModelGraph &g, const BitConfig &cfg);
double compression_ratio(const SensitivityTable &table, const BitConfig &cfg);

// Quantized graphs at uniform bits, keyed by bits (k = n).
using PrecisionVariants = std::map<int, ModelGraph>;

/**
 * Picks each weight layer from the variant of its configured bits, and each
 * add-node output quantizer from the variant of its activation bits.
 */
ModelGraph stitch(const PrecisionVariants &variants, const BitConfig &cfg);

// Loss of a quantized graph; non-finite values are allowed.
using LossFn = std::function<double(const ModelGraph &)>;

/**
 * ΔL per choice = loss(all base but one layer lowered) − loss(all base);
 * ΔP = N·(base − k). `exempt` layers only get the base choice. Choices are
 * tied (k = n). Non-finite losses give ΔL = +inf.
 */
SensitivityTable profile_sensitivity(const PrecisionVariants &variants, int base_bits,
                                     const std::vector<int> &choice_bits, const LossFn &loss,
                                     const std::vector<std::string> &exempt = {});

struct Allocation
{
  BitConfig bits;
  double dloss = 0.0; // Σ ΔL, accumulated in layer order
  double dperf = 0.0; // Σ ΔP, accumulated in layer order
};

/**
 * Exact multiple-choice knapsack: max Σ ΔP s.t. Σ ΔL ≤ budget, one choice
 * per layer, restricted to choices whose bits are in `allowed_bits` (empty:
 * all). Ties prefer smaller Σ ΔL, then lexicographically smaller
 * (k, n) in layer order.
 */
Allocation solve_ip(const SensitivityTable &table, double budget, const std::vector<int> &allowed_bits = {});

struct SweepPoint
{
  double budget = 0.0;
  Allocation allocation;
};
std::vector<SweepPoint> solve_ip_sweep(const SensitivityTable &table, const std::vector<double> &budgets,
                                       const std::vector<int> &allowed_bits = {});

/**
 * Smallest-budget allocation whose compression ratio is ≤ target, found by
 * bisecting the budget (20 steps). If no allocation reaches the target the
 * most compressed one is returned.
 */
Allocation solve_ip_for_ratio(const SensitivityTable &table, double target_ratio,
                              const std::vector<int> &allowed_bits = {});

// Start all-low; raise layers to base in ascending size order while the ratio stays ≤ target.
BitConfig greedy_compression(const SensitivityTable &table, double target_ratio);
// Start all-base; lower layers in ascending lowest-bit ΔL order until the ratio is ≤ target.
BitConfig greedy_accuracy(const SensitivityTable &table, double target_ratio);

// Σ ΔL and Σ ΔP of a configuration in layer order (throws if a choice is missing).
Allocation evaluate_allocation(const SensitivityTable &table, const BitConfig &cfg);

} // namespace quantforge

#endif // QUANTFORGE_ALLOCATOR_HPP
