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

#ifndef QUANTFORGE_ADAM_HPP
#define QUANTFORGE_ADAM_HPP

#include <cmath>
#include <span>
#include <vector>

namespace quantforge
{

// Adam with bias correction for one parameter group.
class Adam
{
public:
  Adam(size_t size, float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : _lr(lr), _beta1(beta1), _beta2(beta2), _eps(eps), _m(size, 0.0f), _v(size, 0.0f)
  {
  }

  void step(std::span<float> param, std::span<const float> grad)
  {
    ++_t;
    const double c1 = 1.0 - std::pow(static_cast<double>(_beta1), _t);
    const double c2 = 1.0 - std::pow(static_cast<double>(_beta2), _t);
    for (size_t i = 0; i < param.size(); ++i)
    {
      _m[i] = _beta1 * _m[i] + (1.0f - _beta1) * grad[i];
      _v[i] = _beta2 * _v[i] + (1.0f - _beta2) * grad[i] * grad[i];
      const double mhat = _m[i] / c1, vhat = _v[i] / c2;
      param[i] -= static_cast<float>(_lr * mhat / (std::sqrt(vhat) + _eps));
    }
  }

private:
  float _lr, _beta1, _beta2, _eps;
  std::vector<float> _m, _v;
  int _t = 0;
};

} // namespace quantforge

#endif // QUANTFORGE_ADAM_HPP
