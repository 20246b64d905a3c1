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

#include "quantforge/archive.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace quantforge
{

namespace fs = std::filesystem;
using nlohmann::json;

namespace
{

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

constexpr int format_version = 1;

std::vector<char> read_file(const fs::path &p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw Error("missing tensor blob: " + p.filename().string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path &p, const void *data, size_t bytes)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error("cannot write " + p.string());
  out.write(static_cast<const char *>(data), static_cast<std::streamsize>(bytes));
}

Shape shape_of(const json &j) { return j.at("shape").get<Shape>(); }

Tensor read_tensor(const fs::path &dir, const json &ref)
{
  const auto file = ref.at("file").get<std::string>();
  Shape shape = shape_of(ref);
  const auto bytes = read_file(dir / file);
  const auto expected = static_cast<size_t>(shape_numel(shape)) * sizeof(float);
  if (bytes.size() != expected)
    throw Error("size mismatch: blob " + file + " has " + std::to_string(bytes.size()) + " bytes, shape " +
                shape_str(shape) + " needs " + std::to_string(expected));
  std::vector<float> data(expected / sizeof(float));
  std::memcpy(data.data(), bytes.data(), expected);
  try
  {
    return Tensor::from_external(std::move(shape), std::move(data));
  }
  catch (const Error &)
  {
    throw Error("NaN or Inf in tensor blob " + file);
  }
}

json write_tensor(const fs::path &dir, const std::string &file, const Tensor &t)
{
  write_file(dir / file, t.ptr(), static_cast<size_t>(t.numel()) * sizeof(float));
  return {{"file", file}, {"shape", t.shape()}};
}

std::vector<float> read_vector(const fs::path &dir, const json &ref)
{
  auto t = read_tensor(dir, ref);
  return {t.data().begin(), t.data().end()};
}

json write_quant(const fs::path &dir, const std::string &stem, const QuantParams &q)
{
  json j{{"bits", q.bits}};
  if (q.passthrough())
    return j;
  j["granularity"] = q.granularity == Granularity::per_channel ? "per_channel" : "per_tensor";
  const auto n = static_cast<int64_t>(q.step.size());
  j["step"] = write_tensor(dir, stem + ".step.bin", Tensor({n}, q.step));
  j["zero_point"] = write_tensor(dir, stem + ".zero_point.bin", Tensor({n}, q.zero_point));
  return j;
}

QuantParams read_quant(const fs::path &dir, const json &j)
{
  QuantParams q;
  q.bits = j.at("bits").get<int>();
  if (!q.passthrough())
  {
    const auto g = j.at("granularity").get<std::string>();
    if (g != "per_channel" && g != "per_tensor")
      throw Error("unknown quantizer granularity '" + g + "'");
    q.granularity = g == "per_channel" ? Granularity::per_channel : Granularity::per_tensor;
    q.step = read_vector(dir, j.at("step"));
    q.zero_point = read_vector(dir, j.at("zero_point"));
  }
  q.validate();
  return q;
}

json read_manifest(const fs::path &dir)
{
  std::ifstream in(dir / manifest_name);
  if (!in)
    throw Error("missing manifest: " + (dir / manifest_name).string());
  json j;
  try
  {
    in >> j;
  }
  catch (const json::exception &e)
  {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  if (j.value("dtype", "") != "f32le")
    throw Error("unsupported archive dtype tag");
  return j;
}

void prepare_dir(const fs::path &dir)
{
  fs::create_directories(dir);
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_regular_file() && (e.path().extension() == ".bin" || e.path().filename() == manifest_name))
      fs::remove(e.path());
}

void write_manifest(const fs::path &dir, const json &j)
{
  std::ofstream out(dir / manifest_name, std::ios::trunc);
  out << j.dump(2) << '\n';
}

} // namespace

ModelGraph load_model(const fs::path &dir)
{
  const json m = read_manifest(dir);
  if (m.value("kind", "") != "model")
    throw Error("archive is not a model: " + dir.string());
  ModelGraph g;
  g.input_shape = m.at("input_shape").get<Shape>();
  g.output = m.at("output").get<std::string>();
  try
  {
    for (const auto &jn : m.at("nodes"))
    {
      LayerNode n;
      n.id = jn.at("id").get<std::string>();
      n.kind = layer_kind_from_string(jn.at("kind").get<std::string>());
      n.inputs = jn.at("inputs").get<std::vector<std::string>>();
      if (jn.contains("params"))
        for (const auto &[name, ref] : jn.at("params").items())
          n.params.emplace(name, read_tensor(dir, ref));
      if (jn.contains("spec"))
      {
        const auto &s = jn.at("spec");
        n.conv = ConvSpec{s.at("in_channels"), s.at("out_channels"), s.at("kernel"), s.value("stride", int64_t{1}),
                          s.value("padding", int64_t{0})};
      }
      n.pool = jn.value("pool", int64_t{2});
      n.eps = jn.value("eps", 1e-5f);
      if (jn.contains("folded_bn"))
      {
        const auto &f = jn.at("folded_bn");
        n.folded_bn = FoldedBn{read_tensor(dir, f.at("gamma")), read_tensor(dir, f.at("beta")), f.at("eps")};
      }
      if (jn.contains("quant"))
      {
        const auto &q = jn.at("quant");
        if (q.contains("weight"))
          n.weight_quant = read_quant(dir, q.at("weight"));
        if (q.contains("input"))
          n.input_quant = read_quant(dir, q.at("input"));
        if (q.contains("output"))
          n.output_quant = read_quant(dir, q.at("output"));
      }
      g.nodes.push_back(std::move(n));
    }
  }
  catch (const json::exception &e)
  {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  if (m.contains("node_count") && m.at("node_count").get<size_t>() != g.nodes.size())
    throw Error("manifest node_count does not match its node list");
  g.validate();
  return g;
}

void save_model(const ModelGraph &g, const fs::path &dir)
{
  g.validate();
  prepare_dir(dir);
  json nodes = json::array();
  for (const auto &n : g.nodes)
  {
    json jn{{"id", n.id}, {"kind", to_string(n.kind)}, {"inputs", n.inputs}};
    if (!n.params.empty())
    {
      json p = json::object();
      for (const auto &[name, t] : n.params)
        p[name] = write_tensor(dir, n.id + "." + name + ".bin", t);
      jn["params"] = p;
    }
    if (n.conv)
      jn["spec"] = {{"in_channels", n.conv->in_channels}, {"out_channels", n.conv->out_channels},
                    {"kernel", n.conv->kernel},           {"stride", n.conv->stride},
                    {"padding", n.conv->padding}};
    if (n.kind == LayerKind::avgpool)
      jn["pool"] = n.pool;
    if (n.kind == LayerKind::batchnorm2d)
      jn["eps"] = n.eps;
    if (n.folded_bn)
      jn["folded_bn"] = {{"gamma", write_tensor(dir, n.id + ".folded_gamma.bin", n.folded_bn->gamma)},
                         {"beta", write_tensor(dir, n.id + ".folded_beta.bin", n.folded_bn->beta)},
                         {"eps", n.folded_bn->eps}};
    json q = json::object();
    if (n.weight_quant)
      q["weight"] = write_quant(dir, n.id + ".wq", *n.weight_quant);
    if (n.input_quant)
      q["input"] = write_quant(dir, n.id + ".iq", *n.input_quant);
    if (n.output_quant)
      q["output"] = write_quant(dir, n.id + ".oq", *n.output_quant);
    if (!q.empty())
      jn["quant"] = q;
    nodes.push_back(std::move(jn));
  }
  write_manifest(dir, {{"format", "quantforge-archive"},
                       {"version", format_version},
                       {"kind", "model"},
                       {"dtype", "f32le"},
                       {"input_shape", g.input_shape},
                       {"output", g.output},
                       {"node_count", g.nodes.size()},
                       {"nodes", nodes}});
}

CalibrationSet load_calibration(const fs::path &dir)
{
  const json m = read_manifest(dir);
  if (m.value("kind", "") != "calibration")
    throw Error("archive is not a calibration set: " + dir.string());
  CalibrationSet s;
  try
  {
    s.inputs = read_tensor(dir, m.at("tensors").at("inputs"));
    if (m.at("tensors").contains("labels"))
    {
      const auto &ref = m.at("tensors").at("labels");
      const auto file = ref.at("file").get<std::string>();
      const auto shape = shape_of(ref);
      const auto bytes = read_file(dir / file);
      const auto n = static_cast<size_t>(shape_numel(shape));
      if (bytes.size() != n * sizeof(int64_t))
        throw Error("size mismatch: labels blob " + file);
      std::vector<int64_t> labels(n);
      std::memcpy(labels.data(), bytes.data(), bytes.size());
      s.labels = std::move(labels);
    }
  }
  catch (const json::exception &e)
  {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  s.validate();
  return s;
}

void save_calibration(const CalibrationSet &set, const fs::path &dir)
{
  set.validate();
  prepare_dir(dir);
  json tensors{{"inputs", write_tensor(dir, "inputs.bin", set.inputs)}};
  if (set.labels)
  {
    write_file(dir / "labels.bin", set.labels->data(), set.labels->size() * sizeof(int64_t));
    tensors["labels"] = {{"file", "labels.bin"},
                         {"shape", Shape{static_cast<int64_t>(set.labels->size())}},
                         {"dtype", "i64le"}};
  }
  write_manifest(dir, {{"format", "quantforge-archive"},
                       {"version", format_version},
                       {"kind", "calibration"},
                       {"dtype", "f32le"},
                       {"tensors", tensors}});
}

Archive load_archive(const fs::path &dir)
{
  const json m = read_manifest(dir);
  if (m.value("kind", "") == "model")
    return load_model(dir);
  return load_calibration(dir);
}

} // namespace quantforge
