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

#include "quantforge/quantizer.hpp"
#include "quantforge/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace quantforge
{

namespace
{

struct ChannelView
{
  int64_t channels;
  int64_t inner;
};

ChannelView channel_view(const Tensor &x, Granularity g)
{
  if (x.empty())
    throw Error("cannot quantize an empty tensor");
  if (g == Granularity::per_tensor)
    return {1, x.numel()};
  return {x.dim(0), x.numel() / x.dim(0)};
}

ChannelView channel_view(const Tensor &x, const QuantParams &q)
{
  auto v = channel_view(x, q.granularity);
  if (static_cast<size_t>(v.channels) != q.channels())
    throw Error("quantizer has " + std::to_string(q.channels()) + " channels, tensor " + shape_str(x.shape()) +
                " needs " + std::to_string(v.channels));
  return v;
}

std::pair<float, float> channel_range(const Tensor &x, int64_t c, int64_t inner)
{
  auto first = x.data().begin() + c * inner;
  auto [lo, hi] = std::minmax_element(first, first + inner);
  return {*lo, *hi};
}

void set_range(QuantParams &q, size_t c, float lo, float hi)
{
  const float span = hi - lo;
  q.step[c] = span > 0.0f ? span / static_cast<float>(q.levels()) : QuantParams::flat_step;
  if (!(q.step[c] > 0.0f))
    q.step[c] = QuantParams::flat_step;
  q.zero_point[c] = lo;
}

struct Lattice
{
  double step;
  double offset; // round(z/s)
  double levels;
};

Lattice lattice(const QuantParams &q, size_t c)
{
  const double s = q.step[c];
  return {s, std::nearbyint(static_cast<double>(q.zero_point[c]) / s), static_cast<double>(q.levels())};
}

double code_of(double x, const Lattice &l)
{
  return std::clamp(std::nearbyint(x / l.step - l.offset), 0.0, l.levels);
}

} // namespace

void QuantParams::validate() const
{
  if (!((bits >= 2 && bits <= 8) || bits == passthrough_bits))
    throw Error("bits must be in [2,8] or 32, got " + std::to_string(bits));
  if (passthrough())
    return;
  if (step.empty() || step.size() != zero_point.size())
    throw Error("quantizer step/zero-point size mismatch");
  for (size_t i = 0; i < step.size(); ++i)
  {
    if (!(step[i] > 0.0f) || !std::isfinite(step[i]))
      throw Error("quantization step must be positive");
    if (!std::isfinite(zero_point[i]))
      throw Error("quantization zero point must be finite");
  }
}

QuantParams QuantParams::passthrough_params()
{
  QuantParams q;
  q.bits = passthrough_bits;
  return q;
}

float round_half_even(float v) noexcept { return std::nearbyint(v); }

Tensor quantize(const Tensor &x, const QuantParams &q)
{
  q.validate();
  if (q.passthrough())
    return x;
  const auto v = channel_view(x, q);
  Tensor out(x.shape());
  for (int64_t c = 0; c < v.channels; ++c)
  {
    const auto l = lattice(q, static_cast<size_t>(c));
    for (int64_t i = c * v.inner; i < (c + 1) * v.inner; ++i)
      out[i] = static_cast<float>(l.step * (code_of(x[i], l) + l.offset));
  }
  return out;
}

Tensor quantize_codes(const Tensor &x, const QuantParams &q)
{
  q.validate();
  if (q.passthrough())
    throw Error("passthrough quantizer has no integer codes");
  const auto v = channel_view(x, q);
  Tensor out(x.shape());
  for (int64_t c = 0; c < v.channels; ++c)
  {
    const auto l = lattice(q, static_cast<size_t>(c));
    for (int64_t i = c * v.inner; i < (c + 1) * v.inner; ++i)
      out[i] = static_cast<float>(code_of(x[i], l));
  }
  return out;
}

QuantParams init_minmax(const Tensor &x, int bits, Granularity granularity)
{
  QuantParams q;
  q.bits = bits;
  q.granularity = granularity;
  if (q.passthrough())
    return q;
  const auto v = channel_view(x, granularity);
  q.step.resize(static_cast<size_t>(v.channels));
  q.zero_point.resize(static_cast<size_t>(v.channels));
  for (int64_t c = 0; c < v.channels; ++c)
  {
    auto [lo, hi] = channel_range(x, c, v.inner);
    set_range(q, static_cast<size_t>(c), lo, hi);
  }
  q.validate();
  return q;
}

std::vector<float> mse_search_grid()
{
  constexpr int points = 200;
  std::vector<float> grid;
  grid.reserve(points + 1);
  for (int i = 0; i < points; ++i)
    grid.push_back(0.2f + static_cast<float>(i) / static_cast<float>(points - 1));
  grid.push_back(1.0f);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

QuantParams calibrate_step_mse(const Tensor &x, int bits, Granularity granularity)
{
  QuantParams q = init_minmax(x, bits, granularity);
  if (q.passthrough())
    return q;
  const auto v = channel_view(x, granularity);
  const auto grid = mse_search_grid();
  QuantParams cand = q;
  for (int64_t c = 0; c < v.channels; ++c)
  {
    const size_t ci = static_cast<size_t>(c);
    auto [lo, hi] = channel_range(x, c, v.inner);
    if (!(hi > lo))
      continue;
    double best = std::numeric_limits<double>::infinity();
    for (float a : grid) // ascending scale == ascending step, so strict < keeps the smaller step on ties
    {
      set_range(cand, ci, a * lo, a * hi);
      const auto l = lattice(cand, ci);
      double sse = 0.0;
      for (int64_t i = c * v.inner; i < (c + 1) * v.inner; ++i)
      {
        const double d = x[i] - static_cast<float>(l.step * (code_of(x[i], l) + l.offset));
        sse += d * d;
      }
      if (sse < best)
      {
        best = sse;
        q.step[ci] = cand.step[ci];
        q.zero_point[ci] = cand.zero_point[ci];
      }
    }
  }
  q.validate();
  return q;
}

std::vector<double> quantization_sse(const Tensor &x, const QuantParams &q)
{
  const Tensor xq = quantize(x, q);
  const auto v = q.passthrough() ? channel_view(x, Granularity::per_tensor) : channel_view(x, q);
  std::vector<double> sse(static_cast<size_t>(v.channels), 0.0);
  for (int64_t c = 0; c < v.channels; ++c)
    for (int64_t i = c * v.inner; i < (c + 1) * v.inner; ++i)
    {
      const double d = static_cast<double>(x[i]) - xq[i];
      sse[static_cast<size_t>(c)] += d * d;
    }
  return sse;
}

SteGrads ste_backward(const Tensor &x, const QuantParams &q, const Tensor &upstream)
{
  count_gradient_call();
  if (upstream.shape() != x.shape())
    throw Error("ste_backward upstream shape mismatch");
  q.validate();
  SteGrads g{Tensor(x.shape()), std::vector<float>(q.channels(), 0.0f), std::vector<float>(q.channels(), 0.0f)};
  if (q.passthrough())
  {
    g.grad_x = upstream;
    return g;
  }
  const auto v = channel_view(x, q);
  for (int64_t c = 0; c < v.channels; ++c)
  {
    const size_t ci = static_cast<size_t>(c);
    const auto l = lattice(q, ci);
    const double z_over_s = static_cast<double>(q.zero_point[ci]) / l.step;
    double gs = 0.0, gz = 0.0;
    for (int64_t i = c * v.inner; i < (c + 1) * v.inner; ++i)
    {
      const double u = x[i] / l.step - l.offset;
      const double r = std::nearbyint(u);
      const double up = upstream[i];
      if (r < 0.0 || r > l.levels)
      {
        const double cb = r < 0.0 ? 0.0 : l.levels;
        gs += up * (cb + l.offset - z_over_s);
        gz += up;
        g.grad_x[i] = 0.0f;
      }
      else
      {
        gs += up * (r - u);
        g.grad_x[i] = upstream[i];
      }
    }
    g.grad_step[ci] = static_cast<float>(gs);
    g.grad_zero_point[ci] = static_cast<float>(gz);
  }
  return g;
}

} // namespace quantforge
