#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nar/encoding.hpp"

namespace nar {

// Line-delimited JSON interchange. One record per line:
//   {"id": "...", "family": "dag7|fixed4|synth", "adjacency": [[0,1,...],...],
//    "ops": [...], "cells": [{"flops": [...], "params": [...]}, ...],
//    "total_flops": x, "total_params": y,
//    "accuracy": {"validation": v, "test": t}}   (accuracy optional)
std::vector<ArchitectureRecord> load_records(const std::string& path, Family family);
void write_records(const std::string& path, const std::vector<ArchitectureRecord>& records);

std::string record_to_json_line(const ArchitectureRecord& rec);
ArchitectureRecord record_from_json_line(const std::string& line, Family family);

// Indexed, immutable view over a record list: the search space.
struct RecordSpace {
  std::vector<ArchitectureRecord> records;
  std::unordered_map<std::string, std::size_t> by_id;
  std::unordered_map<std::string, std::size_t> by_key;         // canonical structure key
  std::vector<std::size_t> rank_order;                         // indices sorted best-first
  std::unordered_map<std::string, std::size_t> rank_of_id;     // 1-based

  const ArchitectureRecord* find_id(const std::string& id) const;
  const ArchitectureRecord* find_key(const std::string& key) const;
};

RecordSpace make_space(std::vector<ArchitectureRecord> records);

struct RankInfo {
  std::size_t rank = 0;  // 1 = best
  double permille = 0.0;
};
// Rank by oracle accuracy, ties broken by id. Throws on unknown ids.
RankInfo true_rank(const RecordSpace& space, const std::string& id);

struct SyntheticSpec {
  int nodes = 6;      // exact node count; node 1 is IN, the last node is OUT
  int max_edges = 6;  // at least nodes-1
  int cells = 3;
  std::uint64_t seed = 1;
  std::size_t max_structures = 200000;  // enumeration budget
};

struct SyntheticSpace {
  SyntheticSpec spec;
  RecordSpace space;
};

// Enumerates every structure in the budget (each non-input node keeps at
// least one predecessor, edges only run low -> high) and attaches a
// deterministic compute profile and oracle accuracy per structure.
SyntheticSpace generate_synthetic(const SyntheticSpec& spec);

struct SplitConfig {
  double train_fraction = 0.02;  // used when train_count == 0
  int train_count = 0;
  int validation_size = 512;
  std::uint64_t seed = 1;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

DataSplit split_records(std::size_t count, const SplitConfig& config);

}  // namespace nar
