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

#include "quantforge/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace quantforge
{

namespace
{

bool is_base(const ChoiceEntry &c, int base) { return c.weight_bits == base && c.act_bits == base; }

bool allowed(const ChoiceEntry &c, const std::vector<int> &bits)
{
  if (bits.empty())
    return true;
  auto has = [&](int b) { return std::find(bits.begin(), bits.end(), b) != bits.end(); };
  return has(c.weight_bits) && has(c.act_bits);
}

// Partial solution over a prefix of the layers.
struct Partial
{
  double dperf = 0.0;
  double dloss = 0.0;
  std::vector<uint8_t> pick;
};

bool lex_less(const SensitivityTable &t, const std::vector<uint8_t> &a, const std::vector<uint8_t> &b)
{
  for (size_t l = 0; l < a.size(); ++l)
  {
    const auto &ca = t.layers[l].choices[a[l]], &cb = t.layers[l].choices[b[l]];
    if (ca.weight_bits != cb.weight_bits)
      return ca.weight_bits < cb.weight_bits;
    if (ca.act_bits != cb.act_bits)
      return ca.act_bits < cb.act_bits;
  }
  return false;
}

Allocation to_allocation(const SensitivityTable &t, const Partial &p)
{
  Allocation a;
  a.dperf = p.dperf;
  a.dloss = p.dloss;
  for (size_t l = 0; l < t.layers.size(); ++l)
  {
    const auto &c = t.layers[l].choices[p.pick[l]];
    a.bits[t.layers[l].id] = {c.weight_bits, c.act_bits};
  }
  return a;
}

double max_budget(const SensitivityTable &t, const std::vector<int> &bits)
{
  double hi = 0.0;
  for (const auto &layer : t.layers)
  {
    double m = 0.0;
    for (const auto &c : layer.choices)
      if (allowed(c, bits) && std::isfinite(c.dloss))
        m = std::max(m, c.dloss);
    hi += m;
  }
  return hi;
}

std::string fmt(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

void SensitivityTable::validate() const
{
  for (const auto &layer : layers)
  {
    if (layer.choices.empty())
      throw Error("sensitivity table: layer '" + layer.id + "' has no choices");
    if (layer.choices.size() > 255)
      throw Error("sensitivity table: too many choices for layer '" + layer.id + "'");
    int base = 0;
    for (const auto &c : layer.choices)
      if (is_base(c, base_bits))
      {
        ++base;
        if (c.dloss != 0.0 || c.dperf != 0.0)
          throw Error("sensitivity table: base choice of '" + layer.id + "' must have dloss = dperf = 0");
      }
    if (base != 1)
      throw Error("sensitivity table: layer '" + layer.id + "' needs exactly one base choice");
  }
}

std::string SensitivityTable::to_csv() const
{
  std::string out = "layer,k,n,dloss,dperf\n";
  for (const auto &layer : layers)
    for (const auto &c : layer.choices)
      out += layer.id + "," + std::to_string(c.weight_bits) + "," + std::to_string(c.act_bits) + "," + fmt(c.dloss) +
             "," + fmt(c.dperf) + "\n";
  return out;
}

SensitivityTable SensitivityTable::from_csv(const std::string &text, int base_bits)
{
  SensitivityTable t;
  t.base_bits = base_bits;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("layer,k,n,dloss,dperf", 0) != 0)
    throw Error("sensitivity CSV: expected header 'layer,k,n,dloss,dperf'");
  std::map<std::string, size_t> index;
  int row = 1;
  while (std::getline(in, line))
  {
    ++row;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');)
      f.push_back(cell);
    if (f.size() != 5)
      throw Error("sensitivity CSV: row " + std::to_string(row) + " needs 5 fields");
    ChoiceEntry c;
    try
    {
      c.weight_bits = std::stoi(f[1]);
      c.act_bits = std::stoi(f[2]);
      c.dloss = std::stod(f[3]);
      c.dperf = std::stod(f[4]);
    }
    catch (const std::exception &)
    {
      throw Error("sensitivity CSV: bad number in row " + std::to_string(row));
    }
    auto [it, fresh] = index.emplace(f[0], t.layers.size());
    if (fresh)
      t.layers.push_back({f[0], 0, {}});
    t.layers[it->second].choices.push_back(c);
  }
  for (auto &layer : t.layers)
    for (const auto &c : layer.choices)
      if (c.weight_bits < base_bits && c.dperf > 0.0)
      {
        layer.params = std::llround(c.dperf / (base_bits - c.weight_bits));
        break;
      }
  t.validate();
  return t;
}

double compression_ratio(const ModelGraph &g, const BitConfig &cfg)
{
  double bits = 0.0, total = 0.0;
  for (const auto &id : g.weight_layers())
  {
    auto it = cfg.find(id);
    if (it == cfg.end())
      throw Error("bit config misses layer '" + id + "'");
    const double n = static_cast<double>(g.node(id).weight_count());
    bits += n * it->second.weight_bits;
    total += n;
  }
  return total > 0.0 ? bits / (32.0 * total) : 0.0;
}

double compression_ratio(const SensitivityTable &table, const BitConfig &cfg)
{
  double bits = 0.0, total = 0.0;
  for (const auto &layer : table.layers)
  {
    auto it = cfg.find(layer.id);
    if (it == cfg.end())
      throw Error("bit config misses layer '" + layer.id + "'");
    bits += static_cast<double>(layer.params) * it->second.weight_bits;
    total += static_cast<double>(layer.params);
  }
  return total > 0.0 ? bits / (32.0 * total) : 0.0;
}

ModelGraph stitch(const PrecisionVariants &variants, const BitConfig &cfg)
{
  if (variants.empty())
    throw Error("stitch needs at least one precision variant");
  auto variant = [&](int bits) -> const ModelGraph & {
    auto it = variants.find(bits);
    if (it == variants.end())
      throw Error("no quantized variant for " + std::to_string(bits) + " bits");
    return it->second;
  };
  ModelGraph out = variants.begin()->second;
  for (const auto &id : out.weight_layers())
  {
    auto it = cfg.find(id);
    if (it == cfg.end())
      throw Error("bit config misses layer '" + id + "'");
    auto &node = out.node(id);
    node = variant(it->second.weight_bits).node(id);
    node.input_quant = variant(it->second.act_bits).node(id).input_quant;
  }
  for (auto &node : out.nodes)
    if (node.kind == LayerKind::add)
      node.output_quant = variant(add_output_bits(out, node, cfg)).node(node.id).output_quant;
  return out;
}

SensitivityTable profile_sensitivity(const PrecisionVariants &variants, int base_bits,
                                     const std::vector<int> &choice_bits, const LossFn &loss,
                                     const std::vector<std::string> &exempt)
{
  auto base_it = variants.find(base_bits);
  if (base_it == variants.end())
    throw Error("no quantized variant for the base precision");
  const ModelGraph &base = base_it->second;
  BitConfig ref_cfg = uniform_bits(base, base_bits);

  SensitivityTable t;
  t.base_bits = base_bits;
  t.reference_loss = loss(stitch(variants, ref_cfg));
  if (!std::isfinite(t.reference_loss))
    throw Error("reference model loss is not finite");

  std::vector<int> bits = choice_bits;
  std::sort(bits.begin(), bits.end());
  bits.erase(std::unique(bits.begin(), bits.end()), bits.end());
  for (const auto &id : base.weight_layers())
  {
    LayerChoices layer{id, base.node(id).weight_count(), {{base_bits, base_bits, 0.0, 0.0}}};
    const bool is_exempt = std::find(exempt.begin(), exempt.end(), id) != exempt.end();
    for (int k : bits)
    {
      if (is_exempt || k == base_bits)
        continue;
      BitConfig cfg = ref_cfg;
      cfg[id] = {k, k};
      const double l = loss(stitch(variants, cfg));
      const double dl = std::isfinite(l) ? l - t.reference_loss : std::numeric_limits<double>::infinity();
      layer.choices.push_back({k, k, dl, static_cast<double>(layer.params) * (base_bits - k)});
    }
    t.layers.push_back(std::move(layer));
  }
  return t;
}

Allocation evaluate_allocation(const SensitivityTable &table, const BitConfig &cfg)
{
  Allocation a;
  a.bits = cfg;
  for (const auto &layer : table.layers)
  {
    auto it = cfg.find(layer.id);
    if (it == cfg.end())
      throw Error("bit config misses layer '" + layer.id + "'");
    auto c = std::find_if(layer.choices.begin(), layer.choices.end(), [&](const ChoiceEntry &e) {
      return e.weight_bits == it->second.weight_bits && e.act_bits == it->second.act_bits;
    });
    if (c == layer.choices.end())
      throw Error("no table entry for layer '" + layer.id + "' at the configured bits");
    a.dloss += c->dloss;
    a.dperf += c->dperf;
  }
  return a;
}

Allocation solve_ip(const SensitivityTable &table, double budget, const std::vector<int> &allowed_bits)
{
  table.validate();
  if (!(budget >= 0.0))
    throw Error("IP budget must be non-negative");

  // Pareto frontier of (max ΔP, min ΔL) over layer prefixes; exact, no discretization.
  std::vector<Partial> frontier{Partial{}};
  for (size_t l = 0; l < table.layers.size(); ++l)
  {
    const auto &layer = table.layers[l];
    std::vector<Partial> next;
    for (const auto &p : frontier)
      for (size_t c = 0; c < layer.choices.size(); ++c)
      {
        const auto &choice = layer.choices[c];
        if (!allowed(choice, allowed_bits) || !std::isfinite(choice.dloss))
          continue;
        Partial q{p.dperf + choice.dperf, p.dloss + choice.dloss, p.pick};
        q.pick.push_back(static_cast<uint8_t>(c));
        next.push_back(std::move(q));
      }
    if (next.empty())
      throw Error("IP infeasible: layer '" + layer.id + "' has no allowed choice with finite dloss");
    std::sort(next.begin(), next.end(), [&](const Partial &a, const Partial &b) {
      if (a.dperf != b.dperf)
        return a.dperf > b.dperf;
      if (a.dloss != b.dloss)
        return a.dloss < b.dloss;
      return lex_less(table, a.pick, b.pick);
    });
    frontier.clear();
    for (auto &p : next)
      if (frontier.empty() || p.dloss < frontier.back().dloss)
        frontier.push_back(std::move(p));
  }
  // Frontier is ordered by ΔP descending with ΔL strictly decreasing.
  for (const auto &p : frontier)
    if (p.dloss <= budget)
      return to_allocation(table, p);
  throw Error("IP infeasible: no configuration fits the loss budget");
}

std::vector<SweepPoint> solve_ip_sweep(const SensitivityTable &table, const std::vector<double> &budgets,
                                       const std::vector<int> &allowed_bits)
{
  std::vector<SweepPoint> out;
  for (double b : budgets)
    out.push_back({b, solve_ip(table, b, allowed_bits)});
  return out;
}

Allocation solve_ip_for_ratio(const SensitivityTable &table, double target_ratio, const std::vector<int> &allowed_bits)
{
  double lo = 0.0, hi = max_budget(table, allowed_bits);
  Allocation best = solve_ip(table, hi, allowed_bits);
  if (compression_ratio(table, best.bits) > target_ratio)
    return best;
  const Allocation at_zero = solve_ip(table, lo, allowed_bits);
  if (compression_ratio(table, at_zero.bits) <= target_ratio)
    return at_zero;
  for (int i = 0; i < 20; ++i)
  {
    const double mid = 0.5 * (lo + hi);
    Allocation a = solve_ip(table, mid, allowed_bits);
    if (compression_ratio(table, a.bits) <= target_ratio)
    {
      hi = mid;
      best = std::move(a);
    }
    else
      lo = mid;
  }
  return best;
}

namespace
{

const ChoiceEntry &lowest_choice(const LayerChoices &layer)
{
  return *std::min_element(layer.choices.begin(), layer.choices.end(), [](const ChoiceEntry &a, const ChoiceEntry &b) {
    return std::tie(a.weight_bits, a.act_bits) < std::tie(b.weight_bits, b.act_bits);
  });
}

std::vector<size_t> layer_order(const SensitivityTable &t, const std::function<double(const LayerChoices &)> &key)
{
  std::vector<size_t> order(t.layers.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return key(t.layers[a]) < key(t.layers[b]); });
  return order;
}

} // namespace

BitConfig greedy_compression(const SensitivityTable &table, double target_ratio)
{
  table.validate();
  BitConfig cfg;
  for (const auto &layer : table.layers)
  {
    const auto &low = lowest_choice(layer);
    cfg[layer.id] = {low.weight_bits, low.act_bits};
  }
  for (size_t l : layer_order(table, [](const LayerChoices &c) { return static_cast<double>(c.params); }))
  {
    BitConfig trial = cfg;
    trial[table.layers[l].id] = {table.base_bits, table.base_bits};
    if (compression_ratio(table, trial) > target_ratio)
      break;
    cfg = std::move(trial);
  }
  return cfg;
}

BitConfig greedy_accuracy(const SensitivityTable &table, double target_ratio)
{
  table.validate();
  BitConfig cfg;
  for (const auto &layer : table.layers)
    cfg[layer.id] = {table.base_bits, table.base_bits};
  for (size_t l : layer_order(table, [](const LayerChoices &c) { return lowest_choice(c).dloss; }))
  {
    if (compression_ratio(table, cfg) <= target_ratio)
      break;
    const auto &low = lowest_choice(table.layers[l]);
    if (!std::isfinite(low.dloss))
      continue;
    cfg[table.layers[l].id] = {low.weight_bits, low.act_bits};
  }
  return cfg;
}

} // namespace quantforge
