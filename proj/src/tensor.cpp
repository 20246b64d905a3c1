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

#include "quantforge/tensor.hpp"
#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace quantforge
{

int64_t shape_numel(const Shape &shape)
{
  int64_t n = 1;
  for (auto d : shape)
  {
    if (d <= 0)
      throw Error("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape &shape)
{
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : _shape(std::move(shape))
{
  _data.assign(static_cast<size_t>(shape_numel(_shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : _shape(std::move(shape)), _data(std::move(data))
{
  if (shape_numel(_shape) != static_cast<int64_t>(_data.size()))
    throw Error("size mismatch: shape " + shape_str(_shape) + " vs " + std::to_string(_data.size()) + " values");
}

Tensor Tensor::from_external(Shape shape, std::vector<float> data)
{
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite())
    throw Error("non-finite value in tensor data");
  return t;
}

Tensor Tensor::reshaped(Shape shape) const
{
  if (shape_numel(shape) != numel())
    throw Error("cannot reshape " + shape_str(_shape) + " to " + shape_str(shape));
  return Tensor(std::move(shape), _data);
}

Tensor Tensor::slice_rows(int64_t begin, int64_t end) const
{
  if (rank() == 0 || begin < 0 || end > _shape[0] || begin >= end)
    throw Error("bad row slice");
  const int64_t row = numel() / _shape[0];
  Shape s = _shape;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<float>(_data.begin() + begin * row, _data.begin() + end * row));
}

Tensor Tensor::gather_rows(std::span<const int64_t> rows) const
{
  const int64_t row = numel() / _shape[0];
  Shape s = _shape;
  s[0] = static_cast<int64_t>(rows.size());
  Tensor out(std::move(s));
  for (size_t i = 0; i < rows.size(); ++i)
  {
    if (rows[i] < 0 || rows[i] >= _shape[0])
      throw Error("row index out of range");
    std::copy_n(_data.begin() + rows[i] * row, row, out._data.begin() + static_cast<int64_t>(i) * row);
  }
  return out;
}

bool Tensor::all_finite() const noexcept
{
  return std::all_of(_data.begin(), _data.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::fill(float v) { std::fill(_data.begin(), _data.end(), v); }

Tensor matmul(const Tensor &a, const Tensor &b)
{
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw Error("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  detail::gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.ptr(), b.ptr(), c.ptr(), false);
  return c;
}

float max_abs_diff(const Tensor &a, const Tensor &b)
{
  if (a.shape() != b.shape())
    throw Error("shape mismatch in max_abs_diff");
  float m = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double mse(const Tensor &a, const Tensor &b)
{
  if (a.shape() != b.shape())
    throw Error("shape mismatch in mse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
  {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return a.numel() ? s / static_cast<double>(a.numel()) : 0.0;
}

namespace detail
{

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float *a, const float *b, float *c,
          bool accumulate)
{
  if (!accumulate)
    std::fill(c, c + m * n, 0.0f);
  // A(i,p) and B(p,j) accessors over the stored layouts.
  const int64_t lda = trans_a ? m : k;
  const int64_t ldb = trans_b ? k : n;
  if (!trans_b)
  {
    for (int64_t i = 0; i < m; ++i)
    {
      float *crow = c + i * n;
      for (int64_t p = 0; p < k; ++p)
      {
        const float av = trans_a ? a[p * lda + i] : a[i * lda + p];
        if (av == 0.0f)
          continue;
        const float *brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j)
          crow[j] += av * brow[j];
      }
    }
    return;
  }
  for (int64_t i = 0; i < m; ++i)
  {
    for (int64_t j = 0; j < n; ++j)
    {
      const float *brow = b + j * ldb;
      float s = 0.0f;
      if (trans_a)
        for (int64_t p = 0; p < k; ++p)
          s += a[p * lda + i] * brow[p];
      else
      {
        const float *arow = a + i * lda;
        for (int64_t p = 0; p < k; ++p)
          s += arow[p] * brow[p];
      }
      c[i * n + j] += s;
    }
  }
}

} // namespace detail

} // namespace quantforge
