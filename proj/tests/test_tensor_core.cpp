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

#include "test_support.hpp"

#include "quantforge/layers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

namespace quantforge
{
namespace
{

using testing::Rng;
using testing::gaussian;
using testing::uniform;

Tensor naive_matmul(const Tensor &a, const Tensor &b)
{
  Tensor c({a.dim(0), b.dim(1)});
  for (int64_t i = 0; i < a.dim(0); ++i)
    for (int64_t j = 0; j < b.dim(1); ++j)
    {
      double s = 0.0;
      for (int64_t p = 0; p < a.dim(1); ++p)
        s += static_cast<double>(a[i * a.dim(1) + p]) * b[p * b.dim(1) + j];
      c[i * c.dim(1) + j] = static_cast<float>(s);
    }
  return c;
}

Tensor naive_conv(const Tensor &x, const Tensor &w, const Tensor &b, const ConvSpec &s)
{
  const int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = s.output_dim(H), Wo = s.output_dim(W), k = s.kernel;
  Tensor y({B, s.out_channels, Ho, Wo});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t o = 0; o < s.out_channels; ++o)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox)
        {
          double acc = b[o];
          for (int64_t c = 0; c < s.in_channels; ++c)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx)
              {
                const int64_t iy = oy * s.stride - s.padding + ky, ix = ox * s.stride - s.padding + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                  continue;
                acc += static_cast<double>(x[((n * s.in_channels + c) * H + iy) * W + ix]) *
                       w[((o * s.in_channels + c) * k + ky) * k + kx];
              }
          y[((n * s.out_channels + o) * Ho + oy) * Wo + ox] = static_cast<float>(acc);
        }
  return y;
}

// Central differences of sum(f(t) ⊙ proj) with respect to every element of t.
Tensor finite_difference(Tensor &t, const std::function<Tensor()> &f, const Tensor &proj, float h = 1e-3f)
{
  Tensor g(t.shape());
  auto objective = [&] {
    const Tensor y = f();
    double s = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i)
      s += static_cast<double>(y[i]) * proj[i];
    return s;
  };
  for (int64_t i = 0; i < t.numel(); ++i)
  {
    const float orig = t[i];
    t[i] = orig + h;
    const double up = objective();
    t[i] = orig - h;
    const double down = objective();
    t[i] = orig;
    g[i] = static_cast<float>((up - down) / (2.0 * h));
  }
  return g;
}

double relative_error(const Tensor &a, const Tensor &b)
{
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
  {
    num += std::pow(static_cast<double>(a[i]) - b[i], 2);
    den += std::pow(static_cast<double>(b[i]), 2);
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged)
{
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, m), m);
}

TEST(Matmul, RowTimesColumn)
{
  const Tensor c = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 11.0f);
}

TEST(Matmul, MatchesTripleLoop)
{
  Rng rng(1);
  const Tensor a = uniform({7, 5}, rng), b = uniform({5, 3}, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-6f);
}

TEST(Matmul, RejectsInnerDimMismatch)
{
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), Error);
}

TEST(Conv2d, IdentityOneByOneKernel)
{
  Rng rng(2);
  const Tensor x = uniform({2, 3, 5, 5}, rng);
  Tensor w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c)
    w[c * 3 + c] = 1.0f;
  EXPECT_EQ(conv2d(x, w, Tensor({3}), {3, 3, 1, 1, 0}), x);
}

TEST(Conv2d, ZeroInputGivesBias)
{
  Rng rng(3);
  const Tensor w = uniform({4, 2, 3, 3}, rng);
  const Tensor y = conv2d(Tensor({1, 2, 6, 6}), w, Tensor({4}, 0.75f), {2, 4, 3, 1, 1});
  for (float v : y.data())
    EXPECT_EQ(v, 0.75f);
}

TEST(Conv2d, MatchesDirectLoops)
{
  Rng rng(4);
  const Tensor x = uniform({2, 3, 8, 8}, rng), w = uniform({5, 3, 3, 3}, rng), b = uniform({5}, rng);
  for (const ConvSpec s : {ConvSpec{3, 5, 3, 1, 1}, ConvSpec{3, 5, 3, 2, 1}, ConvSpec{3, 5, 3, 1, 0}})
    EXPECT_LE(max_abs_diff(conv2d(x, w, b, s), naive_conv(x, w, b, s)), 1e-5f);
}

TEST(Conv2d, RejectsInconsistentShapes)
{
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({3, 3, 3, 3}), Tensor({3}), {3, 3, 3, 1, 1}), Error);
  EXPECT_THROW(ConvSpec({1, 1, 5, 1, 0}).output_dim(3), Error);
}

TEST(LayerForward, Relu)
{
  LayerNode n;
  n.kind = LayerKind::relu;
  n.inputs = {"input"};
  EXPECT_EQ(layer_forward(n, Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2}));
}

TEST(LayerForward, IdentityBatchNorm)
{
  Rng rng(5);
  LayerNode n;
  n.kind = LayerKind::batchnorm2d;
  n.eps = 1e-5f;
  n.params.emplace("gamma", Tensor({3}, 1.0f));
  n.params.emplace("beta", Tensor({3}, 0.0f));
  n.params.emplace("mean", Tensor({3}, 0.0f));
  n.params.emplace("var", Tensor({3}, 1.0f - n.eps));
  const Tensor x = uniform({2, 3, 4, 4}, rng);
  EXPECT_LE(max_abs_diff(layer_forward(n, x), x), 1e-6f);
}

TEST(LayerForward, AvgPoolOfConstant)
{
  LayerNode n;
  n.kind = LayerKind::avgpool;
  n.pool = 2;
  const Tensor y = layer_forward(n, Tensor({1, 2, 4, 6}, 3.25f));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 3}));
  for (float v : y.data())
    EXPECT_EQ(v, 3.25f);
}

TEST(LayerForward, AddNeedsTwoInputs)
{
  LayerNode n;
  n.kind = LayerKind::add;
  EXPECT_THROW(layer_forward(n, Tensor({2})), Error);
}

TEST(LayerForward, UnknownKindRejected) { EXPECT_THROW(layer_kind_from_string("lstm"), Error); }

TEST(LayerForward, Deterministic)
{
  Rng rng(6);
  const auto g = testing::small_resnet(rng);
  const Tensor x = uniform({4, 3, 8, 8}, rng);
  const Tensor a = forward(g, x), b = forward(g, x);
  EXPECT_EQ(a, b);
}

TEST(LayerBackward, FcClosedForm)
{
  // d/dW of ||Wx||²/2 is (Wx)xᵀ.
  Rng rng(7);
  const Tensor x = uniform({1, 4}, rng), w = uniform({3, 4}, rng);
  const Tensor wx = fc_forward(x, w, Tensor({3}));
  const auto g = fc_backward(x, w, wx);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j)
      EXPECT_NEAR(g.grad_w[i * 4 + j], wx[i] * x[j], 1e-6f);
}

TEST(LayerBackward, ReluZeroesNegativeInputs)
{
  const Tensor x({4}, {-2, -0.5f, 0, 3});
  const Tensor g = relu_backward(x, Tensor({4}, 1.0f));
  EXPECT_EQ(g, Tensor({4}, {0, 0, 0, 1}));
}

TEST(LayerBackward, FcMatchesFiniteDifferences)
{
  Rng rng(8);
  Tensor x = uniform({3, 6}, rng), w = uniform({4, 6}, rng), b = uniform({4}, rng);
  const Tensor proj = uniform({3, 4}, rng);
  const auto g = fc_backward(x, w, proj);
  auto f = [&] { return fc_forward(x, w, b); };
  EXPECT_LT(relative_error(g.grad_x, finite_difference(x, f, proj)), 1e-3);
  EXPECT_LT(relative_error(g.grad_w, finite_difference(w, f, proj)), 1e-3);
  EXPECT_LT(relative_error(g.grad_b, finite_difference(b, f, proj)), 1e-3);
}

TEST(LayerBackward, ConvMatchesFiniteDifferences)
{
  Rng rng(9);
  for (const ConvSpec s : {ConvSpec{2, 3, 3, 1, 1}, ConvSpec{2, 3, 3, 2, 1}})
  {
    Tensor x = uniform({2, 2, 5, 5}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({3}, rng);
    const Tensor proj = uniform(conv2d(x, w, b, s).shape(), rng);
    const auto g = conv2d_backward(x, w, proj, s);
    auto f = [&] { return conv2d(x, w, b, s); };
    EXPECT_LT(relative_error(g.grad_x, finite_difference(x, f, proj)), 1e-3);
    EXPECT_LT(relative_error(g.grad_w, finite_difference(w, f, proj)), 1e-3);
    EXPECT_LT(relative_error(g.grad_b, finite_difference(b, f, proj)), 1e-3);
  }
}

TEST(LayerBackward, BatchNormMatchesFiniteDifferences)
{
  Rng rng(10);
  Tensor x = uniform({2, 3, 3, 3}, rng), gamma = uniform({3}, rng, 0.5f, 1.5f), beta = uniform({3}, rng);
  const Tensor mean = uniform({3}, rng), var = uniform({3}, rng, 0.5f, 2.0f);
  const Tensor proj = uniform(x.shape(), rng);
  const auto g = batchnorm_backward(x, gamma, mean, var, 1e-5f, proj);
  auto f = [&] { return batchnorm_forward(x, gamma, beta, mean, var, 1e-5f); };
  EXPECT_LT(relative_error(g.grad_x, finite_difference(x, f, proj)), 1e-3);
  EXPECT_LT(relative_error(g.grad_w, finite_difference(gamma, f, proj)), 1e-3);
  EXPECT_LT(relative_error(g.grad_b, finite_difference(beta, f, proj)), 1e-3);
}

TEST(LayerBackward, PoolReluFlattenMatchFiniteDifferences)
{
  Rng rng(11);
  Tensor x = uniform({2, 2, 4, 4}, rng);
  for (auto &v : x.data()) // keep away from the relu kink
    if (std::fabs(v) < 1e-2f)
      v = 0.5f;
  const Tensor proj_pool = uniform({2, 2, 2, 2}, rng), proj_same = uniform(x.shape(), rng);
  auto pool = [&] { return avgpool(x, 2); };
  EXPECT_LT(relative_error(avgpool_backward(x.shape(), 2, proj_pool), finite_difference(x, pool, proj_pool)), 1e-3);
  auto r = [&] { return relu(x); };
  EXPECT_LT(relative_error(relu_backward(x, proj_same), finite_difference(x, r, proj_same)), 1e-3);
}

TEST(LayerBackward, GraphBackwardMatchesFiniteDifferences)
{
  Rng rng(12);
  auto g = testing::small_resnet(rng);
  const Tensor x = uniform({2, 3, 8, 8}, rng);
  const Tensor proj = uniform({2, 5}, rng);
  const auto grads = backward(g, forward_trace(g, x), proj, TrainableSet::all);
  for (const char *id : {"conv1", "conv2", "fc"})
  {
    auto &b = g.node(id).param("bias");
    auto f = [&] { return forward(g, x); };
    EXPECT_LT(relative_error(grads.at(id).at("bias"), finite_difference(b, f, proj)), 1e-3) << id;
  }
  auto &w = g.node("conv2").param("weight");
  EXPECT_LT(relative_error(grads.at("conv2").at("weight"), finite_difference(w, [&] { return forward(g, x); }, proj)),
            1e-3);
}

TEST(LayerBackward, CountsGradientCalls)
{
  const auto before = gradient_calls();
  relu_backward(Tensor({1}), Tensor({1}));
  EXPECT_EQ(gradient_calls(), before + 1);
}

TEST(Tensor, RejectsNonFiniteExternalData)
{
  EXPECT_THROW(Tensor::from_external({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()}), Error);
  EXPECT_THROW(Tensor::from_external({2}, {1.0f, std::numeric_limits<float>::infinity()}), Error);
  EXPECT_THROW(Tensor({3}, std::vector<float>{1, 2}), Error);
}

} // namespace
} // namespace quantforge
