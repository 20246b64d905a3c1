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

#ifndef QUANTFORGE_SRC_GEMM_HPP
#define QUANTFORGE_SRC_GEMM_HPP

#include <cstdint>

namespace quantforge::detail
{

// C[M×N] (+)= op(A) · op(B), all row-major. op(A) is M×K, op(B) is K×N.
// lda/ldb are the row strides of the stored (untransposed) matrices.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float *a, const float *b, float *c,
          bool accumulate);

} // namespace quantforge::detail

#endif // QUANTFORGE_SRC_GEMM_HPP
