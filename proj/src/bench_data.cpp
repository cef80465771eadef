#include "nar/bench_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nar/rng.hpp"

#include <json.hpp>

namespace nar {

namespace {

using nlohmann::json;

json record_to_json(const ArchitectureRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["family"] = family_name(rec.family);
  json adj = json::array();
  for (const auto& row : rec.adjacency) {
    json r = json::array();
    for (std::uint8_t a : row) r.push_back(static_cast<int>(a));
    adj.push_back(std::move(r));
  }
  j["adjacency"] = std::move(adj);
  j["ops"] = rec.op_codes;
  json cells = json::array();
  for (const CellProfile& cell : rec.cells) {
    cells.push_back(json{{"flops", cell.flops}, {"params", cell.params}});
  }
  j["cells"] = std::move(cells);
  j["total_flops"] = rec.total_flops;
  j["total_params"] = rec.total_params;
  if (rec.accuracy_validation || rec.accuracy_test) {
    json acc;
    if (rec.accuracy_validation) acc["validation"] = *rec.accuracy_validation;
    if (rec.accuracy_test) acc["test"] = *rec.accuracy_test;
    j["accuracy"] = std::move(acc);
  }
  return j;
}

ArchitectureRecord record_from_json(const json& j, Family family) {
  static const std::vector<std::string> known = {"id",    "family",      "adjacency",   "ops",
                                                 "cells", "total_flops", "total_params", "accuracy"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw std::invalid_argument("unknown record field '" + it.key() + "'");
    }
  }
  ArchitectureRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.family = family_from_name(j.at("family").get<std::string>());
  if (rec.family != family) {
    throw std::invalid_argument("record '" + rec.id + "' has family " + family_name(rec.family) +
                                ", expected " + family_name(family));
  }
  for (const json& row : j.at("adjacency")) {
    std::vector<std::uint8_t> r;
    for (const json& v : row) r.push_back(static_cast<std::uint8_t>(v.get<int>()));
    rec.adjacency.push_back(std::move(r));
  }
  rec.op_codes = j.at("ops").get<std::vector<int>>();
  for (const json& c : j.at("cells")) {
    CellProfile cell;
    cell.flops = c.at("flops").get<std::vector<double>>();
    cell.params = c.at("params").get<std::vector<double>>();
    rec.cells.push_back(std::move(cell));
  }
  rec.total_flops = j.at("total_flops").get<double>();
  rec.total_params = j.at("total_params").get<double>();
  if (j.contains("accuracy")) {
    const json& acc = j.at("accuracy");
    if (acc.contains("validation")) rec.accuracy_validation = acc.at("validation").get<double>();
    if (acc.contains("test")) rec.accuracy_test = acc.at("test").get<double>();
  }
  validate_record(rec);
  return rec;
}

}  // namespace

std::string record_to_json_line(const ArchitectureRecord& rec) { return record_to_json(rec).dump(); }

ArchitectureRecord record_from_json_line(const std::string& line, Family family) {
  return record_from_json(json::parse(line), family);
}

std::vector<ArchitectureRecord> load_records(const std::string& path, Family family) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open record file " + path);
  std::vector<ArchitectureRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json_line(line, family));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_records(const std::string& path, const std::vector<ArchitectureRecord>& records) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline translation
  if (!out) throw std::runtime_error("cannot write record file " + path);
  for (const ArchitectureRecord& rec : records) out << record_to_json_line(rec) << '\n';
  if (!out) throw std::runtime_error("failed writing record file " + path);
}

const ArchitectureRecord* RecordSpace::find_id(const std::string& id) const {
  auto it = by_id.find(id);
  return it == by_id.end() ? nullptr : &records[it->second];
}

const ArchitectureRecord* RecordSpace::find_key(const std::string& key) const {
  auto it = by_key.find(key);
  return it == by_key.end() ? nullptr : &records[it->second];
}

RecordSpace make_space(std::vector<ArchitectureRecord> records) {
  RecordSpace s;
  s.records = std::move(records);
  s.by_id.reserve(s.records.size());
  s.by_key.reserve(s.records.size());
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    if (!s.by_id.emplace(s.records[i].id, i).second) {
      throw std::invalid_argument("duplicate record id '" + s.records[i].id + "'");
    }
    s.by_key.emplace(structure_key(s.records[i]), i);
  }
  // global ranking over records that carry ground truth
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    if (s.records[i].oracle_accuracy()) s.rank_order.push_back(i);
  }
  std::sort(s.rank_order.begin(), s.rank_order.end(), [&](std::size_t a, std::size_t b) {
    const double aa = *s.records[a].oracle_accuracy();
    const double bb = *s.records[b].oracle_accuracy();
    if (aa != bb) return aa > bb;
    return s.records[a].id < s.records[b].id;
  });
  for (std::size_t r = 0; r < s.rank_order.size(); ++r) {
    s.rank_of_id.emplace(s.records[s.rank_order[r]].id, r + 1);
  }
  return s;
}

RankInfo true_rank(const RecordSpace& space, const std::string& id) {
  auto it = space.rank_of_id.find(id);
  if (it == space.rank_of_id.end()) throw std::invalid_argument("no ranked record with id '" + id + "'");
  RankInfo info;
  info.rank = it->second;
  info.permille = 1000.0 * static_cast<double>(info.rank) / static_cast<double>(space.rank_order.size());
  return info;
}

namespace {

struct OracleTables {
  // per (op code 1..5, depth 0..nodes-1)
  std::vector<std::vector<double>> flops;
  std::vector<std::vector<double>> params;
  std::vector<double> cell_scale_flops;
  std::vector<double> cell_scale_params;
  // oracle weights
  double w_op2, w_op3, w_op4, w_depth, w_flops, w_params, bias;
};

OracleTables make_tables(const SyntheticSpec& spec, Rng& rng) {
  OracleTables t;
  t.flops.assign(6, std::vector<double>(static_cast<std::size_t>(spec.nodes), 0.0));
  t.params.assign(6, std::vector<double>(static_cast<std::size_t>(spec.nodes), 0.0));
  for (int code = 1; code <= 5; ++code) {
    for (int d = 0; d < spec.nodes; ++d) {
      const double depth_gain = 1.0 + 0.25 * d;
      // IN/OUT nodes are cheap glue; internal ops carry the compute
      const bool internal = code >= 2 && code <= 4;
      t.flops[static_cast<std::size_t>(code)][static_cast<std::size_t>(d)] =
          (internal ? rng.uniform(20.0, 180.0) : rng.uniform(1.0, 8.0)) * depth_gain;
      t.params[static_cast<std::size_t>(code)][static_cast<std::size_t>(d)] =
          (internal ? rng.uniform(5.0, 60.0) : rng.uniform(0.5, 3.0)) * depth_gain;
    }
  }
  for (int c = 0; c < spec.cells; ++c) {
    t.cell_scale_flops.push_back(rng.uniform(0.8, 1.2) * (1.0 + 0.5 * c));
    t.cell_scale_params.push_back(rng.uniform(0.8, 1.2) * (1.0 + 0.5 * c));
  }
  t.w_op2 = rng.uniform(-1.5, -0.5);
  t.w_op3 = rng.uniform(0.5, 1.5);
  t.w_op4 = rng.uniform(-0.5, 0.5);
  t.w_depth = rng.uniform(0.5, 1.5);
  t.w_flops = rng.uniform(0.75, 1.75);
  t.w_params = rng.uniform(-1.25, -0.25);
  t.bias = 1.2;
  return t;
}

std::vector<int> node_depths(const std::vector<std::vector<std::uint8_t>>& adj) {
  const int n = static_cast<int>(adj.size());
  std::vector<int> depth(static_cast<std::size_t>(n), 0);
  for (int j = 1; j < n; ++j) {
    for (int i = 0; i < j; ++i) {
      if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
        depth[static_cast<std::size_t>(j)] =
            std::max(depth[static_cast<std::size_t>(j)], depth[static_cast<std::size_t>(i)] + 1);
      }
    }
  }
  return depth;
}

std::string structure_id(const std::vector<std::vector<std::uint8_t>>& adj, const std::vector<int>& ops) {
  // upper-triangular bits packed into hex + internal op digits
  const int n = static_cast<int>(adj.size());
  std::uint64_t bits = 0;
  int nbits = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      bits = (bits << 1) | adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      ++nbits;
    }
  std::ostringstream os;
  os << "syn" << std::hex << bits << std::dec << "-";
  for (int j = 1; j + 1 < n; ++j) os << ops[static_cast<std::size_t>(j)];
  return os.str();
}

// deterministic per-structure noise stream, independent of enumeration order
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double structure_noise(const std::string& id, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0x632be59bd9b4e019ULL;
  for (char c : id) h = splitmix(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return (static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0) * 0.005;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SyntheticSpace generate_synthetic(const SyntheticSpec& spec) {
  if (spec.nodes < 3) throw std::invalid_argument("synthetic space needs at least 3 nodes");
  if (spec.max_edges < spec.nodes - 1) {
    throw std::invalid_argument("max_edges must be at least nodes-1 so every node can keep a predecessor");
  }
  if (spec.cells < 1) throw std::invalid_argument("synthetic space needs at least one cell");

  Rng rng(spec.seed);
  const OracleTables tables = make_tables(spec, rng);
  const int n = spec.nodes;

  // enumerate predecessor subsets per node under the edge budget
  std::vector<std::vector<std::vector<int>>> subset_options(static_cast<std::size_t>(n));
  for (int j = 1; j < n; ++j) {
    for (int mask = 1; mask < (1 << j); ++mask) {
      std::vector<int> preds;
      for (int i = 0; i < j; ++i)
        if (mask & (1 << i)) preds.push_back(i);
      subset_options[static_cast<std::size_t>(j)].push_back(std::move(preds));
    }
  }

  std::vector<std::vector<std::vector<std::uint8_t>>> adjacencies;
  std::vector<std::vector<std::uint8_t>> adj(static_cast<std::size_t>(n),
                                             std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));
  const auto enumerate_adj = [&](auto&& self, int j, int edges) -> void {
    if (j == n) {
      adjacencies.push_back(adj);
      return;
    }
    for (const std::vector<int>& preds : subset_options[static_cast<std::size_t>(j)]) {
      const int e = edges + static_cast<int>(preds.size());
      if (e > spec.max_edges) continue;
      for (int i : preds) adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
      self(self, j + 1, e);
      for (int i : preds) adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 0;
    }
  };
  enumerate_adj(enumerate_adj, 1, 0);

  const int internal = n - 2;
  std::size_t op_combos = 1;
  for (int i = 0; i < internal; ++i) op_combos *= 3;
  const std::size_t total = adjacencies.size() * op_combos;
  if (total > spec.max_structures) {
    throw std::invalid_argument("synthetic space would hold " + std::to_string(total) +
                                " structures, over the budget of " + std::to_string(spec.max_structures));
  }

  std::vector<ArchitectureRecord> records;
  records.reserve(total);
  std::vector<int> ops(static_cast<std::size_t>(n), 0);
  ops[0] = 1;                              // IN
  ops[static_cast<std::size_t>(n - 1)] = 5;  // OUT

  for (const auto& a : adjacencies) {
    const std::vector<int> depth = node_depths(a);
    for (std::size_t combo = 0; combo < op_combos; ++combo) {
      std::size_t c = combo;
      for (int i = 0; i < internal; ++i) {
        ops[static_cast<std::size_t>(1 + i)] = 2 + static_cast<int>(c % 3);
        c /= 3;
      }
      ArchitectureRecord rec;
      rec.family = Family::synth;
      rec.adjacency = a;
      rec.op_codes = ops;
      rec.id = structure_id(a, ops);
      for (int cell = 0; cell < spec.cells; ++cell) {
        CellProfile profile;
        profile.flops.resize(static_cast<std::size_t>(n));
        profile.params.resize(static_cast<std::size_t>(n));
        for (int v = 0; v < n; ++v) {
          const int code = ops[static_cast<std::size_t>(v)];
          const int d = depth[static_cast<std::size_t>(v)];
          profile.flops[static_cast<std::size_t>(v)] =
              tables.flops[static_cast<std::size_t>(code)][static_cast<std::size_t>(d)] *
              tables.cell_scale_flops[static_cast<std::size_t>(cell)];
          profile.params[static_cast<std::size_t>(v)] =
              tables.params[static_cast<std::size_t>(code)][static_cast<std::size_t>(d)] *
              tables.cell_scale_params[static_cast<std::size_t>(cell)];
          rec.total_flops += profile.flops[static_cast<std::size_t>(v)];
          rec.total_params += profile.params[static_cast<std::size_t>(v)];
        }
        rec.cells.push_back(std::move(profile));
      }
      records.push_back(std::move(rec));
    }
  }

  // oracle accuracy: logistic of a structural score plus small seeded noise
  double flops_lo = HUGE_VAL, flops_hi = -HUGE_VAL, params_lo = HUGE_VAL, params_hi = -HUGE_VAL;
  for (const ArchitectureRecord& rec : records) {
    flops_lo = std::min(flops_lo, rec.total_flops);
    flops_hi = std::max(flops_hi, rec.total_flops);
    params_lo = std::min(params_lo, rec.total_params);
    params_hi = std::max(params_hi, rec.total_params);
  }
  const double flops_span = std::max(1e-12, flops_hi - flops_lo);
  const double params_span = std::max(1e-12, params_hi - params_lo);
  for (ArchitectureRecord& rec : records) {
    const std::vector<int> depth = node_depths(rec.adjacency);
    double frac2 = 0.0, frac3 = 0.0, frac4 = 0.0;
    for (int v = 1; v + 1 < n; ++v) {
      const int code = rec.op_codes[static_cast<std::size_t>(v)];
      if (code == 2) frac2 += 1.0;
      if (code == 3) frac3 += 1.0;
      if (code == 4) frac4 += 1.0;
    }
    frac2 /= internal;
    frac3 /= internal;
    frac4 /= internal;
    const double depth_frac = static_cast<double>(depth[static_cast<std::size_t>(n - 1)]) / (n - 1);
    const double flops_frac = (rec.total_flops - flops_lo) / flops_span;
    const double params_frac = (rec.total_params - params_lo) / params_span;
    const double score = tables.bias + tables.w_op2 * frac2 + tables.w_op3 * frac3 + tables.w_op4 * frac4 +
                         tables.w_depth * depth_frac + tables.w_flops * flops_frac +
                         tables.w_params * params_frac;
    const double acc = logistic(score + structure_noise(rec.id, spec.seed));
    rec.accuracy_validation = acc;
    rec.accuracy_test = acc;
  }

  SyntheticSpace out;
  out.spec = spec;
  out.space = make_space(std::move(records));
  return out;
}

DataSplit split_records(std::size_t count, const SplitConfig& config) {
  std::vector<std::size_t> indices(count);
  for (std::size_t i = 0; i < count; ++i) indices[i] = i;
  Rng rng(config.seed);
  rng.shuffle(indices);

  std::size_t train_n = config.train_count > 0
                            ? static_cast<std::size_t>(config.train_count)
                            : static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(count)));
  train_n = std::min(train_n, count);
  std::size_t val_n = std::min(static_cast<std::size_t>(config.validation_size), count - train_n);

  DataSplit split;
  split.train.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(train_n));
  split.validation.assign(indices.begin() + static_cast<std::ptrdiff_t>(train_n),
                          indices.begin() + static_cast<std::ptrdiff_t>(train_n + val_n));
  return split;
}

}  // namespace nar
