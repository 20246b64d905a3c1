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

// Regenerates the committed tinycnn fixture: a small residual CNN trained on a
// seeded synthetic 10-class 12×12 image task, with batch norms inserted after
// training as exact identities, plus calibration and held-out archives.

#include "quantforge/archive.hpp"
#include "quantforge/adam.hpp"
#include "quantforge/metrics.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <random>

using namespace quantforge;

namespace
{

constexpr int64_t classes = 10, side = 12;

using Rng = std::mt19937_64;

struct Dataset
{
  Tensor x;
  std::vector<int64_t> y;
};

// Each class is a sum of signed Gaussian blobs; samples are shifted, scaled and noisy copies.
class Task
{
public:
  explicit Task(Rng &rng)
  {
    std::uniform_real_distribution<double> pos(2.5, 9.5), width(1.0, 2.2);
    std::bernoulli_distribution sign(0.35);
    for (int64_t c = 0; c < classes; ++c)
    {
      std::vector<double> t(side * side, 0.0);
      for (int b = 0; b < 4; ++b)
      {
        const double cy = pos(rng), cx = pos(rng), w = width(rng), s = sign(rng) ? -1.0 : 1.0;
        for (int64_t i = 0; i < side; ++i)
          for (int64_t j = 0; j < side; ++j)
            t[i * side + j] += s * std::exp(-((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (2 * w * w));
      }
      _templates.push_back(std::move(t));
    }
  }

  // Class-balanced (as far as n allows) in shuffled order.
  Dataset sample(Rng &rng, int64_t n) const
  {
    std::uniform_int_distribution<int> shift(-2, 2);
    std::uniform_real_distribution<double> amp(0.6, 1.4);
    std::normal_distribution<double> noise(0.0, 0.45);
    Dataset d{Tensor({n, 1, side, side}), {}};
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      order[static_cast<size_t>(i)] = i % classes;
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t k = 0; k < n; ++k)
    {
      const int64_t c = order[static_cast<size_t>(k)];
      const int dy = shift(rng), dx = shift(rng);
      const double a = amp(rng);
      for (int64_t i = 0; i < side; ++i)
        for (int64_t j = 0; j < side; ++j)
        {
          const int64_t si = i - dy, sj = j - dx;
          const double v = si >= 0 && si < side && sj >= 0 && sj < side ? _templates[c][si * side + sj] : 0.0;
          d.x[(k * side + i) * side + j] = static_cast<float>(a * v + noise(rng));
        }
      d.y.push_back(c);
    }
    return d;
  }

private:
  std::vector<std::vector<double>> _templates;
};

LayerNode conv(const std::string &id, const std::string &in, ConvSpec spec, Rng &rng)
{
  LayerNode n;
  n.id = id;
  n.kind = LayerKind::conv2d;
  n.inputs = {in};
  n.conv = spec;
  std::normal_distribution<float> d(0.0f, std::sqrt(2.0f / static_cast<float>(spec.in_channels * spec.kernel * spec.kernel)));
  Tensor w({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  for (auto &v : w.data())
    v = d(rng);
  n.params.emplace("weight", w);
  n.params.emplace("bias", Tensor({spec.out_channels}));
  return n;
}

LayerNode simple(const std::string &id, LayerKind kind, std::vector<std::string> in)
{
  LayerNode n;
  n.id = id;
  n.kind = kind;
  n.inputs = std::move(in);
  return n;
}

// conv1-relu1-conv2-relu2-conv3-relu3-conv4-add(relu2)-relu4-pool-flat-fc, without batch norms.
ModelGraph build(Rng &rng)
{
  ModelGraph g;
  g.input_shape = {1, side, side};
  g.nodes.push_back(conv("conv1", graph_input_id, {1, 16, 3, 1, 1}, rng));
  g.nodes.push_back(simple("relu1", LayerKind::relu, {"conv1"}));
  g.nodes.push_back(conv("conv2", "relu1", {16, 24, 3, 2, 1}, rng));
  g.nodes.push_back(simple("relu2", LayerKind::relu, {"conv2"}));
  g.nodes.push_back(conv("conv3", "relu2", {24, 24, 3, 1, 1}, rng));
  g.nodes.push_back(simple("relu3", LayerKind::relu, {"conv3"}));
  g.nodes.push_back(conv("conv4", "relu3", {24, 24, 3, 1, 1}, rng));
  g.nodes.push_back(simple("add", LayerKind::add, {"relu2", "conv4"}));
  g.nodes.push_back(simple("relu4", LayerKind::relu, {"add"}));
  g.nodes.push_back(simple("pool", LayerKind::avgpool, {"relu4"}));
  g.nodes.push_back(simple("flat", LayerKind::flatten, {"pool"}));
  LayerNode fc;
  fc.id = "fc";
  fc.kind = LayerKind::fc;
  fc.inputs = {"flat"};
  const int64_t in = 24 * 3 * 3;
  std::normal_distribution<float> d(0.0f, 1.0f / std::sqrt(static_cast<float>(in)));
  Tensor w({classes, in});
  for (auto &v : w.data())
    v = d(rng);
  fc.params.emplace("weight", w);
  fc.params.emplace("bias", Tensor({classes}));
  g.nodes.push_back(fc);
  g.output = "fc";
  g.validate();
  return g;
}

void train(ModelGraph &g, const Dataset &data, int epochs, Rng &rng)
{
  const int64_t n = data.x.dim(0), batch = 32;
  std::map<std::string, Adam> opt;
  for (const auto &id : g.weight_layers())
    for (const auto &[name, t] : g.node(id).params)
      opt.emplace(id + "." + name, Adam(static_cast<size_t>(t.numel()), 2e-3f));
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  for (int e = 0; e < epochs; ++e)
  {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (int64_t b = 0; b + batch <= n; b += batch)
    {
      const std::vector<int64_t> rows(order.begin() + b, order.begin() + b + batch);
      const Tensor x = data.x.gather_rows(rows);
      std::vector<int64_t> y;
      for (auto r : rows)
        y.push_back(data.y[static_cast<size_t>(r)]);
      const auto trace = forward_trace(g, x);
      total += cross_entropy(trace.result(), y);
      Tensor grad = softmax(trace.result());
      for (int64_t i = 0; i < batch; ++i)
        grad[i * classes + y[static_cast<size_t>(i)]] -= 1.0f;
      for (auto &v : grad.data())
        v /= static_cast<float>(batch);
      for (auto &[id, params] : backward(g, trace, grad, TrainableSet::all))
        for (auto &[name, gt] : params)
          opt.at(id + "." + name).step(g.node(id).param(name).data(), gt.data());
    }
    std::printf("epoch %d  train CE %.4f\n", e + 1, total / static_cast<double>(n / batch));
  }
}

// Inserts a batch norm after every conv whose statistics match the data,
// rescaling the conv per channel so the folded model equals the trained one.
ModelGraph insert_batchnorms(const ModelGraph &g, const Tensor &x, Rng &rng)
{
  const auto trace = forward_trace(g, x);
  std::uniform_real_distribution<float> scale(0.5f, 2.0f);
  ModelGraph out = g;
  std::vector<LayerNode> nodes;
  for (const auto &node : out.nodes)
  {
    nodes.push_back(node);
    if (node.kind != LayerKind::conv2d)
      continue;
    const Tensor &y = trace.outputs[g.index_of(node.id)];
    const int64_t c = y.dim(1), inner = y.dim(2) * y.dim(3), batch = y.dim(0);
    LayerNode &cv = nodes.back();
    LayerNode bn = simple("bn" + node.id.substr(4), LayerKind::batchnorm2d, {node.id});
    Tensor gamma({c}), beta({c}), mean({c}), var({c});
    for (int64_t ch = 0; ch < c; ++ch)
    {
      double s = 0.0, sq = 0.0;
      for (int64_t n = 0; n < batch; ++n)
        for (int64_t i = 0; i < inner; ++i)
        {
          const double v = y[(n * c + ch) * inner + i];
          s += v;
          sq += v * v;
        }
      const double mu = s / static_cast<double>(batch * inner);
      const double v = std::max(sq / static_cast<double>(batch * inner) - mu * mu, 1e-4);
      const float a = scale(rng);
      const int64_t k = cv.param("weight").numel() / c;
      for (int64_t i = 0; i < k; ++i)
        cv.param("weight")[ch * k + i] *= a;
      cv.param("bias")[ch] *= a;
      mean[ch] = static_cast<float>(a * mu);
      var[ch] = static_cast<float>(a * a * v);
      gamma[ch] = static_cast<float>(std::sqrt(a * a * v + bn.eps) / a);
      beta[ch] = static_cast<float>(mu);
    }
    bn.params.emplace("gamma", gamma);
    bn.params.emplace("beta", beta);
    bn.params.emplace("mean", mean);
    bn.params.emplace("var", var);
    nodes.push_back(bn);
  }
  out.nodes = nodes;
  for (const auto &node : g.nodes)
    if (node.kind == LayerKind::conv2d)
      rewire(out, node.id, "bn" + node.id.substr(4));
  out.validate();
  return out;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Regenerate the tinycnn test fixture"};
  uint64_t seed = 7;
  int epochs = 12;
  std::string out = "tests/fixtures/tinycnn";
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--epochs", epochs, "training epochs");
  app.add_option("--out", out, "output directory");
  CLI11_PARSE(app, argc, argv);

  try
  {
    Rng rng(seed);
    const Task task(rng);
    const Dataset train_set = task.sample(rng, 4000);
    const Dataset calib = task.sample(rng, 256);
    const Dataset holdout = task.sample(rng, 1000);

    ModelGraph g = build(rng);
    train(g, train_set, epochs, rng);
    const ModelGraph with_bn = insert_batchnorms(g, train_set.x, rng);

    const Tensor ref = forward_batched(g, holdout.x);
    const Tensor got = forward_batched(with_bn, holdout.x);
    std::printf("bn insertion max deviation %.3g\n", max_abs_diff(ref, got));
    std::printf("holdout top-1 %.4f  calibration top-1 %.4f\n", top1(got, holdout.y),
                top1(forward_batched(with_bn, calib.x), calib.y));
    std::printf("parameters %lld\n", static_cast<long long>(with_bn.total_weight_count()));

    const std::filesystem::path dir(out);
    save_model(with_bn, dir / "model");
    save_calibration({calib.x, calib.y}, dir / "calib");
    save_calibration({holdout.x, holdout.y}, dir / "holdout");
  }
  catch (const std::exception &e)
  {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
