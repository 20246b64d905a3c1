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

#ifndef QUANTFORGE_TENSOR_HPP
#define QUANTFORGE_TENSOR_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quantforge
{

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

/**
 * Dense row-major float32 tensor. Owns its storage; copies are deep.
 */
class Tensor
{
public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  // Same as the (shape, data) constructor but also rejects NaN/Inf.
  static Tensor from_external(Shape shape, std::vector<float> data);

  const Shape &shape() const noexcept { return _shape; }
  int64_t dim(size_t i) const { return _shape.at(i); }
  size_t rank() const noexcept { return _shape.size(); }
  int64_t numel() const noexcept { return static_cast<int64_t>(_data.size()); }
  bool empty() const noexcept { return _data.empty(); }

  std::span<float> data() noexcept { return _data; }
  std::span<const float> data() const noexcept { return _data; }
  float *ptr() noexcept { return _data.data(); }
  const float *ptr() const noexcept { return _data.data(); }

  float &operator[](int64_t i) { return _data[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return _data[static_cast<size_t>(i)]; }

  // Returns a copy with a new shape of the same element count.
  Tensor reshaped(Shape shape) const;
  // Rows [begin, end) along axis 0.
  Tensor slice_rows(int64_t begin, int64_t end) const;
  // Gathers rows along axis 0 in the given order.
  Tensor gather_rows(std::span<const int64_t> rows) const;

  bool all_finite() const noexcept;
  void fill(float v);

  bool operator==(const Tensor &o) const { return _shape == o._shape && _data == o._data; }

private:
  Shape _shape;
  std::vector<float> _data;
};

Tensor matmul(const Tensor &a, const Tensor &b);

float max_abs_diff(const Tensor &a, const Tensor &b);
// Mean of squared elementwise differences.
double mse(const Tensor &a, const Tensor &b);

} // namespace quantforge

#endif // QUANTFORGE_TENSOR_HPP
