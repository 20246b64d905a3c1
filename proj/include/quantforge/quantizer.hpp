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

#ifndef QUANTFORGE_QUANTIZER_HPP
#define QUANTFORGE_QUANTIZER_HPP

#include "quantforge/tensor.hpp"

#include <optional>
#include <vector>

namespace quantforge
{

enum class Granularity
{
  per_tensor,
  per_channel, // axis 0, the output channel of a weight tensor
};

/**
 * Asymmetric affine fake-quantizer state.
 *
 * A value x maps to the integer code c = clamp(round(x/s - round(z/s)), 0, 2^bits - 1)
 * and dequantizes to s * (c + round(z/s)). Rounding is half-to-even. With
 * per-channel granularity `step` and `zero_point` hold one entry per slice along
 * axis 0. bits == 32 means passthrough.
 */
struct QuantParams
{
  int bits = 8;
  Granularity granularity = Granularity::per_tensor;
  std::vector<float> step;
  std::vector<float> zero_point;

  static constexpr int passthrough_bits = 32;
  static constexpr float flat_step = 1e-8f;

  bool passthrough() const noexcept { return bits == passthrough_bits; }
  int64_t levels() const noexcept { return (int64_t{1} << bits) - 1; }
  size_t channels() const noexcept { return step.size(); }

  // Throws on bits outside [2,8]∪{32}, non-positive or non-finite step, or size mismatch.
  void validate() const;

  static QuantParams passthrough_params();
  bool operator==(const QuantParams &) const = default;
};

float round_half_even(float v) noexcept;

Tensor quantize(const Tensor &x, const QuantParams &q);
// Integer codes c (before adding the quantized offset), as floats.
Tensor quantize_codes(const Tensor &x, const QuantParams &q);

QuantParams init_minmax(const Tensor &x, int bits, Granularity granularity);

// Candidate range scales scanned by calibrate_step_mse: 200 points of
// linspace(0.2, 1.2) plus the min-max point 1.0.
std::vector<float> mse_search_grid();

// Range [a*min, a*max] for the grid scale a, per tensor or per channel;
// returns the lowest-MSE candidate, ties to the smaller step.
QuantParams calibrate_step_mse(const Tensor &x, int bits, Granularity granularity);

// Per-channel (or single) sum of squared quantization error.
std::vector<double> quantization_sse(const Tensor &x, const QuantParams &q);

struct SteGrads
{
  Tensor grad_x;
  std::vector<float> grad_step;
  std::vector<float> grad_zero_point;
};

/**
 * Straight-through gradients of the fake-quantizer. Rounding is treated as an
 * additive residual frozen at its current value, so inside the clamp range
 * d/dx = 1, d/ds = c - (x/s - round(z/s)), d/dz = 0; in the clamped region
 * d/dx = 0, d/ds = c + round(z/s) - z/s, d/dz = 1.
 */
SteGrads ste_backward(const Tensor &x, const QuantParams &q, const Tensor &upstream);

} // namespace quantforge

#endif // QUANTFORGE_QUANTIZER_HPP
