#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nar/tensor.hpp"

namespace nar {

// Cell layout families.
//   dag7   — up to 7 nodes, node ops 1..5 (IN, 1x1 conv, 3x3 conv, 3x3 max-pool, OUT),
//            at most 9 edges, 9 cell profiles, encodes to (19, 7, 7).
//   fixed4 — exactly 4 nodes, complete upper-triangular connectivity, ops live on
//            the 6 edges with codes 0..4 (zeroize, skip, 1x1 conv, 3x3 conv,
//            3x3 avg-pool), 15 cell profiles, encodes to (31, 4, 4).
//   synth  — dag7 layout with a configurable node/cell budget.
enum class Family { dag7, fixed4, synth };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Per-cell compute profile: one FLOPs (MFLOPs) and one parameter-count
// (K params) entry per node.
struct CellProfile {
  std::vector<double> flops;
  std::vector<double> params;
};

struct ArchitectureRecord {
  std::string id;
  Family family = Family::dag7;
  // strictly upper-triangular 0/1, nodes topologically indexed
  std::vector<std::vector<std::uint8_t>> adjacency;
  // dag7/synth: one op code per node; fixed4: one op code per edge in
  // lexicographic pair order (0,1),(0,2),(0,3),(1,2),(1,3),(2,3)
  std::vector<int> op_codes;
  std::vector<CellProfile> cells;
  double total_flops = 0.0;
  double total_params = 0.0;
  std::optional<double> accuracy_validation;
  std::optional<double> accuracy_test;

  int node_count() const { return static_cast<int>(adjacency.size()); }
  int edge_count() const;
  // ground truth for training/ranking; validation preferred
  std::optional<double> accuracy() const;
  // ground truth for search-phase oracle queries; test preferred
  std::optional<double> oracle_accuracy() const;
};

// Throws std::invalid_argument naming the violated family invariant.
void validate_record(const ArchitectureRecord& rec);

// Canonical structure key: family tag + adjacency bits + op codes. Two records
// share a key iff they are the same architecture.
std::string structure_key(const ArchitectureRecord& rec);

struct FeatureTensor {
  int channels = 0;
  int resolution = 0;
  std::vector<double> values;  // channels x resolution x resolution, row-major

  double at(int c, int i, int j) const {
    return values[(static_cast<std::size_t>(c) * resolution + i) * resolution + j];
  }
  double& at(int c, int i, int j) {
    return values[(static_cast<std::size_t>(c) * resolution + i) * resolution + j];
  }
};

// Channel-stacked encodings. Channel 0 holds the operation matrix, then the
// FLOPs/params matrix pair of every cell in cell order.
FeatureTensor encode_dag7(const ArchitectureRecord& rec);
FeatureTensor encode_fixed4(const ArchitectureRecord& rec);
FeatureTensor encode_record(const ArchitectureRecord& rec);

// Per-channel standardization statistics, estimated on the training set and
// persisted with the model.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stdev;
  bool empty() const { return mean.empty(); }
};

ChannelStats compute_channel_stats(const std::vector<FeatureTensor>& tensors);
FeatureTensor standardize(const FeatureTensor& t, const ChannelStats& stats);

// Each channel flattened row-major into one patch row -> {channels, P*P}.
Tensor flatten_patches(const FeatureTensor& t);

// Fixed sine/cosine positional table, {positions, dim}.
Tensor sinusoid_table(int positions, int dim);

// Reference patch embedding: flatten, project with proj {P^2, D}, add pos
// {N, D}. The model builds the same computation on the tape.
Tensor patchify(const FeatureTensor& t, const Tensor& proj, const Tensor& pos);

}  // namespace nar
