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

#include "quantforge/layers.hpp"
#include "gemm.hpp"

#include <algorithm>
#include <cmath>

namespace quantforge
{

namespace
{

std::atomic<uint64_t> g_gradient_calls{0};

void require(bool cond, const std::string &msg)
{
  if (!cond)
    throw Error(msg);
}

// cols[(c*k + ky)*k + kx][oy*Wo + ox] for one sample.
void im2col(const float *x, int64_t c_in, int64_t h, int64_t w, const ConvSpec &s, int64_t ho, int64_t wo, float *cols)
{
  const int64_t k = s.kernel;
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx)
      {
        float *row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy)
        {
          const int64_t iy = oy * s.stride - s.padding + ky;
          for (int64_t ox = 0; ox < wo; ++ox)
          {
            const int64_t ix = ox * s.stride - s.padding + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(c * h + iy) * w + ix] : 0.0f;
          }
        }
      }
}

void col2im(const float *cols, int64_t c_in, int64_t h, int64_t w, const ConvSpec &s, int64_t ho, int64_t wo, float *x)
{
  const int64_t k = s.kernel;
  for (int64_t c = 0; c < c_in; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx)
      {
        const float *row = cols + ((c * k + ky) * k + kx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy)
        {
          const int64_t iy = oy * s.stride - s.padding + ky;
          if (iy < 0 || iy >= h)
            continue;
          for (int64_t ox = 0; ox < wo; ++ox)
          {
            const int64_t ix = ox * s.stride - s.padding + kx;
            if (ix >= 0 && ix < w)
              x[(c * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

void check_conv_shapes(const Tensor &x, const Tensor &w, const ConvSpec &spec)
{
  spec.validate();
  require(x.rank() == 4 && x.dim(1) == spec.in_channels,
          "conv2d input shape " + shape_str(x.shape()) + " inconsistent with in_channels");
  require(w.shape() == Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
          "conv2d weight shape " + shape_str(w.shape()) + " inconsistent with spec");
}

int64_t channel_inner(const Tensor &x)
{
  require(x.rank() == 2 || x.rank() == 4, "batchnorm expects rank 2 or 4 input");
  return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
}

} // namespace

std::string to_string(LayerKind kind)
{
  switch (kind)
  {
  case LayerKind::fc: return "fc";
  case LayerKind::conv2d: return "conv2d";
  case LayerKind::batchnorm2d: return "batchnorm2d";
  case LayerKind::relu: return "relu";
  case LayerKind::avgpool: return "avgpool";
  case LayerKind::flatten: return "flatten";
  case LayerKind::add: return "add";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string &s)
{
  for (auto k : {LayerKind::fc, LayerKind::conv2d, LayerKind::batchnorm2d, LayerKind::relu, LayerKind::avgpool,
                 LayerKind::flatten, LayerKind::add})
    if (to_string(k) == s)
      return k;
  throw Error("unsupported layer type: " + s);
}

void ConvSpec::validate() const
{
  require(in_channels >= 1 && out_channels >= 1 && kernel >= 1 && stride >= 1 && padding >= 0,
          "invalid conv spec");
}

int64_t ConvSpec::output_dim(int64_t in) const
{
  const int64_t span = in + 2 * padding - kernel;
  require(span >= 0, "conv output dimension < 1");
  return span / stride + 1;
}

const Tensor &LayerNode::param(const std::string &name) const
{
  auto it = params.find(name);
  if (it == params.end())
    throw Error("layer '" + id + "' has no parameter '" + name + "'");
  return it->second;
}

Tensor &LayerNode::param(const std::string &name)
{
  auto it = params.find(name);
  if (it == params.end())
    throw Error("layer '" + id + "' has no parameter '" + name + "'");
  return it->second;
}

int64_t LayerNode::weight_count() const { return has_weights() ? param("weight").numel() : 0; }

int64_t LayerNode::out_channels() const { return param("weight").dim(0); }

Tensor fc_forward(const Tensor &x, const Tensor &w, const Tensor &b)
{
  require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
          "fc shape mismatch: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
  require(b.numel() == w.dim(0), "fc bias size mismatch");
  const int64_t batch = x.dim(0), m = w.dim(0);
  Tensor y({batch, m});
  detail::gemm(false, true, batch, m, x.dim(1), x.ptr(), w.ptr(), y.ptr(), false);
  for (int64_t i = 0; i < batch; ++i)
    for (int64_t j = 0; j < m; ++j)
      y[i * m + j] += b[j];
  return y;
}

WeightGrads fc_backward(const Tensor &x, const Tensor &w, const Tensor &upstream)
{
  count_gradient_call();
  const int64_t batch = x.dim(0), n = x.dim(1), m = w.dim(0);
  require(upstream.shape() == Shape{batch, m}, "fc upstream shape mismatch");
  WeightGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({m})};
  detail::gemm(false, false, batch, n, m, upstream.ptr(), w.ptr(), g.grad_x.ptr(), false);
  detail::gemm(true, false, m, n, batch, upstream.ptr(), x.ptr(), g.grad_w.ptr(), false);
  for (int64_t i = 0; i < batch; ++i)
    for (int64_t j = 0; j < m; ++j)
      g.grad_b[j] += upstream[i * m + j];
  return g;
}

Tensor conv2d(const Tensor &x, const Tensor &w, const Tensor &b, const ConvSpec &spec)
{
  check_conv_shapes(x, w, spec);
  require(b.numel() == spec.out_channels, "conv2d bias size mismatch");
  const int64_t batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int64_t ho = spec.output_dim(h), wo = spec.output_dim(wd);
  const int64_t kk = spec.in_channels * spec.kernel * spec.kernel, hw = ho * wo;
  Tensor y({batch, spec.out_channels, ho, wo});
  std::vector<float> cols(static_cast<size_t>(kk * hw));
  for (int64_t n = 0; n < batch; ++n)
  {
    im2col(x.ptr() + n * spec.in_channels * h * wd, spec.in_channels, h, wd, spec, ho, wo, cols.data());
    float *out = y.ptr() + n * spec.out_channels * hw;
    detail::gemm(false, false, spec.out_channels, hw, kk, w.ptr(), cols.data(), out, false);
    for (int64_t o = 0; o < spec.out_channels; ++o)
      for (int64_t i = 0; i < hw; ++i)
        out[o * hw + i] += b[o];
  }
  return y;
}

WeightGrads conv2d_backward(const Tensor &x, const Tensor &w, const Tensor &upstream, const ConvSpec &spec)
{
  count_gradient_call();
  check_conv_shapes(x, w, spec);
  const int64_t batch = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int64_t ho = spec.output_dim(h), wo = spec.output_dim(wd);
  const int64_t kk = spec.in_channels * spec.kernel * spec.kernel, hw = ho * wo;
  require(upstream.shape() == Shape{batch, spec.out_channels, ho, wo}, "conv2d upstream shape mismatch");
  WeightGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({spec.out_channels})};
  std::vector<float> cols(static_cast<size_t>(kk * hw));
  std::vector<float> gcols(static_cast<size_t>(kk * hw));
  for (int64_t n = 0; n < batch; ++n)
  {
    const float *gout = upstream.ptr() + n * spec.out_channels * hw;
    im2col(x.ptr() + n * spec.in_channels * h * wd, spec.in_channels, h, wd, spec, ho, wo, cols.data());
    detail::gemm(false, true, spec.out_channels, kk, hw, gout, cols.data(), g.grad_w.ptr(), true);
    detail::gemm(true, false, kk, hw, spec.out_channels, w.ptr(), gout, gcols.data(), false);
    col2im(gcols.data(), spec.in_channels, h, wd, spec, ho, wo, g.grad_x.ptr() + n * spec.in_channels * h * wd);
    for (int64_t o = 0; o < spec.out_channels; ++o)
    {
      float s = 0.0f;
      for (int64_t i = 0; i < hw; ++i)
        s += gout[o * hw + i];
      g.grad_b[o] += s;
    }
  }
  return g;
}

Tensor batchnorm_forward(const Tensor &x, const Tensor &gamma, const Tensor &beta, const Tensor &mean,
                         const Tensor &var, float eps)
{
  const int64_t inner = channel_inner(x), c = x.dim(1), batch = x.dim(0);
  require(gamma.numel() == c && beta.numel() == c && mean.numel() == c && var.numel() == c,
          "batchnorm parameter size mismatch");
  Tensor y(x.shape());
  for (int64_t ch = 0; ch < c; ++ch)
  {
    const float scale = gamma[ch] / std::sqrt(var[ch] + eps);
    for (int64_t n = 0; n < batch; ++n)
    {
      const int64_t base = (n * c + ch) * inner;
      for (int64_t i = 0; i < inner; ++i)
        y[base + i] = scale * (x[base + i] - mean[ch]) + beta[ch];
    }
  }
  return y;
}

WeightGrads batchnorm_backward(const Tensor &x, const Tensor &gamma, const Tensor &mean, const Tensor &var,
                               float eps, const Tensor &upstream)
{
  count_gradient_call();
  const int64_t inner = channel_inner(x), c = x.dim(1), batch = x.dim(0);
  WeightGrads g{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  for (int64_t ch = 0; ch < c; ++ch)
  {
    const float sd = std::sqrt(var[ch] + eps);
    const float scale = gamma[ch] / sd;
    for (int64_t n = 0; n < batch; ++n)
    {
      const int64_t base = (n * c + ch) * inner;
      for (int64_t i = 0; i < inner; ++i)
      {
        const float up = upstream[base + i];
        g.grad_x[base + i] = up * scale;
        g.grad_w[ch] += up * (x[base + i] - mean[ch]) / sd;
        g.grad_b[ch] += up;
      }
    }
  }
  return g;
}

Tensor relu(const Tensor &x)
{
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor &x, const Tensor &upstream)
{
  count_gradient_call();
  Tensor g(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    g[i] = x[i] > 0.0f ? upstream[i] : 0.0f;
  return g;
}

Tensor avgpool(const Tensor &x, int64_t k)
{
  require(x.rank() == 4 && k >= 1, "avgpool expects rank-4 input");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h / k, wo = w / k;
  require(ho >= 1 && wo >= 1, "avgpool window larger than input");
  Tensor y({b, c, ho, wo});
  const float inv = 1.0f / static_cast<float>(k * k);
  for (int64_t p = 0; p < b * c; ++p)
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox)
      {
        float s = 0.0f;
        for (int64_t dy = 0; dy < k; ++dy)
          for (int64_t dx = 0; dx < k; ++dx)
            s += x[(p * h + oy * k + dy) * w + ox * k + dx];
        y[(p * ho + oy) * wo + ox] = s * inv;
      }
  return y;
}

Tensor avgpool_backward(const Shape &input_shape, int64_t k, const Tensor &upstream)
{
  count_gradient_call();
  Tensor g(input_shape);
  const int64_t h = input_shape[2], w = input_shape[3];
  const int64_t ho = h / k, wo = w / k;
  const float inv = 1.0f / static_cast<float>(k * k);
  for (int64_t p = 0; p < input_shape[0] * input_shape[1]; ++p)
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox)
      {
        const float v = upstream[(p * ho + oy) * wo + ox] * inv;
        for (int64_t dy = 0; dy < k; ++dy)
          for (int64_t dx = 0; dx < k; ++dx)
            g[(p * h + oy * k + dy) * w + ox * k + dx] = v;
      }
  return g;
}

Tensor flatten(const Tensor &x)
{
  require(x.rank() >= 1, "flatten of scalar");
  return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
}

Tensor add(const Tensor &a, const Tensor &b)
{
  require(a.shape() == b.shape(), "add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor y(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    y[i] = a[i] + b[i];
  return y;
}

Tensor layer_forward(const LayerNode &node, std::span<const Tensor *const> inputs)
{
  const size_t expected = node.kind == LayerKind::add ? 2 : 1;
  require(inputs.size() == expected, "layer '" + node.id + "' expects " + std::to_string(expected) + " inputs");
  const Tensor &x = *inputs[0];
  switch (node.kind)
  {
  case LayerKind::fc: return fc_forward(x, node.param("weight"), node.param("bias"));
  case LayerKind::conv2d:
    require(node.conv.has_value(), "conv layer '" + node.id + "' without spec");
    return conv2d(x, node.param("weight"), node.param("bias"), *node.conv);
  case LayerKind::batchnorm2d:
    return batchnorm_forward(x, node.param("gamma"), node.param("beta"), node.param("mean"), node.param("var"),
                             node.eps);
  case LayerKind::relu: return relu(x);
  case LayerKind::avgpool: return avgpool(x, node.pool);
  case LayerKind::flatten: return flatten(x);
  case LayerKind::add: return add(x, *inputs[1]);
  }
  throw Error("unsupported layer type");
}

Tensor layer_forward(const LayerNode &node, const Tensor &x)
{
  const Tensor *in[] = {&x};
  return layer_forward(node, in);
}

LayerGrads layer_backward(const LayerNode &node, std::span<const Tensor *const> inputs, const Tensor &upstream)
{
  const size_t expected = node.kind == LayerKind::add ? 2 : 1;
  require(inputs.size() == expected, "layer '" + node.id + "' expects " + std::to_string(expected) + " inputs");
  const Tensor &x = *inputs[0];
  LayerGrads out;
  switch (node.kind)
  {
  case LayerKind::fc:
  case LayerKind::conv2d: {
    auto g = node.kind == LayerKind::fc ? fc_backward(x, node.param("weight"), upstream)
                                        : conv2d_backward(x, node.param("weight"), upstream, *node.conv);
    out.grad_inputs.push_back(std::move(g.grad_x));
    out.grad_params.emplace("weight", std::move(g.grad_w));
    out.grad_params.emplace("bias", std::move(g.grad_b));
    return out;
  }
  case LayerKind::batchnorm2d: {
    auto g = batchnorm_backward(x, node.param("gamma"), node.param("mean"), node.param("var"), node.eps, upstream);
    out.grad_inputs.push_back(std::move(g.grad_x));
    out.grad_params.emplace("gamma", std::move(g.grad_w));
    out.grad_params.emplace("beta", std::move(g.grad_b));
    return out;
  }
  case LayerKind::relu: out.grad_inputs.push_back(relu_backward(x, upstream)); return out;
  case LayerKind::avgpool: out.grad_inputs.push_back(avgpool_backward(x.shape(), node.pool, upstream)); return out;
  case LayerKind::flatten:
    count_gradient_call();
    out.grad_inputs.push_back(upstream.reshaped(x.shape()));
    return out;
  case LayerKind::add:
    count_gradient_call();
    out.grad_inputs.push_back(upstream);
    out.grad_inputs.push_back(upstream);
    return out;
  }
  throw Error("unsupported layer type");
}

LayerGrads layer_backward(const LayerNode &node, const Tensor &x, const Tensor &upstream)
{
  const Tensor *in[] = {&x};
  return layer_backward(node, in, upstream);
}

uint64_t gradient_calls() noexcept { return g_gradient_calls.load(std::memory_order_relaxed); }

void count_gradient_call() noexcept { g_gradient_calls.fetch_add(1, std::memory_order_relaxed); }

} // namespace quantforge
