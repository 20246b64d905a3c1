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

#include "quantforge/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace quantforge
{

namespace
{

bool classification_shaped(const Tensor &t) { return t.rank() == 2 && t.dim(1) >= 2; }

// log-softmax of one row, in double.
void log_softmax_row(const float *row, int64_t k, std::vector<double> &out)
{
  out.resize(static_cast<size_t>(k));
  double m = row[0];
  for (int64_t j = 1; j < k; ++j)
    m = std::max(m, static_cast<double>(row[j]));
  double s = 0.0;
  for (int64_t j = 0; j < k; ++j)
    s += std::exp(row[j] - m);
  const double lse = m + std::log(s);
  for (int64_t j = 0; j < k; ++j)
    out[static_cast<size_t>(j)] = row[j] - lse;
}

} // namespace

Tensor softmax(const Tensor &logits)
{
  if (logits.rank() != 2)
    throw Error("softmax expects [B x K] logits");
  const int64_t b = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  std::vector<double> ls;
  for (int64_t i = 0; i < b; ++i)
  {
    log_softmax_row(logits.ptr() + i * k, k, ls);
    for (int64_t j = 0; j < k; ++j)
      p[i * k + j] = static_cast<float>(std::exp(ls[static_cast<size_t>(j)]));
  }
  return p;
}

double kd_loss(const Tensor &teacher, const Tensor &student)
{
  if (teacher.shape() != student.shape())
    throw Error("kd_loss shape mismatch: " + shape_str(teacher.shape()) + " vs " + shape_str(student.shape()));
  if (!classification_shaped(teacher))
    return mse(teacher, student);
  const int64_t b = teacher.dim(0), k = teacher.dim(1);
  std::vector<double> lt, ls;
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i)
  {
    log_softmax_row(teacher.ptr() + i * k, k, lt);
    log_softmax_row(student.ptr() + i * k, k, ls);
    double kl = 0.0;
    for (size_t j = 0; j < lt.size(); ++j)
      kl += std::exp(lt[j]) * (lt[j] - ls[j]);
    total += kl;
  }
  return total / static_cast<double>(b);
}

Tensor kd_loss_grad(const Tensor &teacher, const Tensor &student)
{
  if (teacher.shape() != student.shape())
    throw Error("kd_loss_grad shape mismatch");
  Tensor g(student.shape());
  if (!classification_shaped(teacher))
  {
    const double scale = 2.0 / static_cast<double>(student.numel());
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] = static_cast<float>(scale * (static_cast<double>(student[i]) - teacher[i]));
    return g;
  }
  const Tensor pt = softmax(teacher), ps = softmax(student);
  const float inv_b = 1.0f / static_cast<float>(student.dim(0));
  for (int64_t i = 0; i < g.numel(); ++i)
    g[i] = (ps[i] - pt[i]) * inv_b;
  return g;
}

double cross_entropy(const Tensor &logits, const std::vector<int64_t> &labels)
{
  if (!classification_shaped(logits) || static_cast<int64_t>(labels.size()) != logits.dim(0))
    throw Error("cross_entropy expects [B x K] logits and B labels");
  const int64_t b = logits.dim(0), k = logits.dim(1);
  std::vector<double> ls;
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i)
  {
    const auto y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k)
      throw Error("label out of range");
    log_softmax_row(logits.ptr() + i * k, k, ls);
    total -= ls[static_cast<size_t>(y)];
  }
  return total / static_cast<double>(b);
}

std::vector<int64_t> argmax_rows(const Tensor &logits)
{
  if (logits.rank() != 2)
    throw Error("argmax expects [B x K] logits");
  const int64_t b = logits.dim(0), k = logits.dim(1);
  std::vector<int64_t> out(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i)
  {
    const float *row = logits.ptr() + i * k;
    out[static_cast<size_t>(i)] = std::max_element(row, row + k) - row;
  }
  return out;
}

double top1(const Tensor &logits, const std::vector<int64_t> &labels)
{
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size())
    throw Error("top1 label count mismatch");
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

Tensor forward_batched(const ModelGraph &g, const Tensor &inputs, int64_t chunk)
{
  const int64_t n = inputs.dim(0);
  if (n <= chunk)
    return forward(g, inputs);
  std::vector<float> data;
  Shape shape;
  for (int64_t begin = 0; begin < n; begin += chunk)
  {
    const Tensor y = forward(g, inputs.slice_rows(begin, std::min(n, begin + chunk)));
    if (shape.empty())
      shape = y.shape();
    data.insert(data.end(), y.data().begin(), y.data().end());
  }
  shape[0] = n;
  return Tensor(std::move(shape), std::move(data));
}

MetricsReport evaluate(const ModelGraph &g, const CalibrationSet &calib, const Tensor *reference_outputs)
{
  calib.validate();
  const Tensor out = forward_batched(g, calib.inputs);
  MetricsReport r;
  if (reference_outputs)
  {
    r.loss = kd_loss(*reference_outputs, out);
    if (classification_shaped(out))
      r.teacher_agreement = top1(out, argmax_rows(*reference_outputs));
  }
  else if (calib.labels)
    r.loss = cross_entropy(out, *calib.labels);
  else
    throw Error("evaluate needs reference outputs or labels");
  if (calib.labels && classification_shaped(out))
    r.top1 = top1(out, *calib.labels);
  return r;
}

} // namespace quantforge
