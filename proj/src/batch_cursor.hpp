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

#ifndef QUANTFORGE_BATCH_CURSOR_HPP
#define QUANTFORGE_BATCH_CURSOR_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace quantforge::detail
{

// Cyclic minibatches over a seeded per-epoch shuffle.
class BatchCursor
{
public:
  BatchCursor(int64_t rows, int64_t batch, uint64_t seed) : _rng(seed), _order(static_cast<size_t>(rows)), _batch(batch)
  {
    std::iota(_order.begin(), _order.end(), int64_t{0});
    if (!full())
      std::shuffle(_order.begin(), _order.end(), _rng);
  }

  bool full() const { return _batch >= static_cast<int64_t>(_order.size()); }

  std::vector<int64_t> next()
  {
    if (full())
      return _order;
    std::vector<int64_t> rows;
    rows.reserve(static_cast<size_t>(_batch));
    while (static_cast<int64_t>(rows.size()) < _batch)
    {
      if (_pos == _order.size())
      {
        std::shuffle(_order.begin(), _order.end(), _rng);
        _pos = 0;
      }
      rows.push_back(_order[_pos++]);
    }
    return rows;
  }

private:
  std::mt19937_64 _rng;
  std::vector<int64_t> _order;
  int64_t _batch;
  size_t _pos = 0;
};

} // namespace quantforge::detail

#endif // QUANTFORGE_BATCH_CURSOR_HPP
