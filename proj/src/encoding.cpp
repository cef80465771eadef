#include "nar/encoding.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nar {

namespace {

constexpr int kDag7Nodes = 7;
constexpr int kDag7MaxEdges = 9;
constexpr int kDag7Cells = 9;
constexpr int kFixed4Nodes = 4;
constexpr int kFixed4Cells = 15;

void fail(const ArchitectureRecord& rec, const std::string& why) {
  throw std::invalid_argument("record '" + rec.id + "': " + why);
}

void check_adjacency(const ArchitectureRecord& rec) {
  const int n = rec.node_count();
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rec.adjacency[i].size()) != n) fail(rec, "adjacency is not square");
    for (int j = 0; j < n; ++j) {
      const std::uint8_t a = rec.adjacency[i][j];
      if (a != 0 && a != 1) fail(rec, "adjacency entries must be 0/1");
      if (a == 1 && j <= i) fail(rec, "adjacency must be strictly upper-triangular");
    }
  }
}

void check_cells(const ArchitectureRecord& rec, int expected_cells) {
  if (static_cast<int>(rec.cells.size()) != expected_cells) {
    fail(rec, "expected " + std::to_string(expected_cells) + " cells, got " + std::to_string(rec.cells.size()));
  }
  const int n = rec.node_count();
  for (std::size_t c = 0; c < rec.cells.size(); ++c) {
    const CellProfile& cell = rec.cells[c];
    if (static_cast<int>(cell.flops.size()) != n || static_cast<int>(cell.params.size()) != n) {
      fail(rec, "cell " + std::to_string(c) + " vector length does not match node count");
    }
    for (double v : cell.flops)
      if (!(v >= 0.0)) fail(rec, "cell " + std::to_string(c) + " has a negative or non-finite FLOPs entry");
    for (double v : cell.params)
      if (!(v >= 0.0)) fail(rec, "cell " + std::to_string(c) + " has a negative or non-finite params entry");
  }
}

void check_accuracy(const ArchitectureRecord& rec) {
  for (const auto& acc : {rec.accuracy_validation, rec.accuracy_test}) {
    if (acc && !(*acc >= 0.0 && *acc <= 1.0)) fail(rec, "accuracy outside [0, 1]");
  }
}

// op matrix and per-cell matrices share one construction: a node vector
// broadcast along columns, masked by the adjacency. Entry (i, j) carries the
// source node's value on edge i -> j.
void broadcast_channel(const ArchitectureRecord& rec, const std::vector<double>& node_values, int channel,
                       FeatureTensor& out) {
  const int n = rec.node_count();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (rec.adjacency[i][j]) out.at(channel, i, j) = node_values[static_cast<std::size_t>(i)];
}

FeatureTensor encode_cells(const ArchitectureRecord& rec, int resolution) {
  FeatureTensor out;
  out.channels = 1 + 2 * static_cast<int>(rec.cells.size());
  out.resolution = resolution;
  out.values.assign(static_cast<std::size_t>(out.channels) * resolution * resolution, 0.0);

  std::vector<double> ops(rec.op_codes.size());
  for (std::size_t i = 0; i < ops.size(); ++i) ops[i] = static_cast<double>(rec.op_codes[i]);
  broadcast_channel(rec, ops, 0, out);

  int channel = 1;
  for (const CellProfile& cell : rec.cells) {
    broadcast_channel(rec, cell.flops, channel, out);
    broadcast_channel(rec, cell.params, channel + 1, out);
    channel += 2;
  }
  return out;
}

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::dag7: return "dag7";
    case Family::fixed4: return "fixed4";
    case Family::synth: return "synth";
  }
  throw std::logic_error("unknown family");
}

Family family_from_name(const std::string& name) {
  if (name == "dag7") return Family::dag7;
  if (name == "fixed4") return Family::fixed4;
  if (name == "synth") return Family::synth;
  throw std::invalid_argument("unknown family '" + name + "'");
}

int ArchitectureRecord::edge_count() const {
  int e = 0;
  for (const auto& row : adjacency)
    for (std::uint8_t a : row) e += a;
  return e;
}

std::optional<double> ArchitectureRecord::accuracy() const {
  if (accuracy_validation) return accuracy_validation;
  return accuracy_test;
}

std::optional<double> ArchitectureRecord::oracle_accuracy() const {
  if (accuracy_test) return accuracy_test;
  return accuracy_validation;
}

void validate_record(const ArchitectureRecord& rec) {
  const int n = rec.node_count();
  if (n < 2) fail(rec, "needs at least 2 nodes");
  check_adjacency(rec);
  check_accuracy(rec);

  switch (rec.family) {
    case Family::dag7: {
      if (n > kDag7Nodes) fail(rec, "dag7 allows at most 7 nodes, got " + std::to_string(n));
      if (rec.edge_count() > kDag7MaxEdges) fail(rec, "dag7 allows at most 9 edges, got " + std::to_string(rec.edge_count()));
      if (static_cast<int>(rec.op_codes.size()) != n) fail(rec, "node count mismatch between adjacency and op codes");
      for (int code : rec.op_codes)
        if (code < 1 || code > 5) fail(rec, "dag7 op codes must be in 1..5, got " + std::to_string(code));
      check_cells(rec, kDag7Cells);
      break;
    }
    case Family::fixed4: {
      if (n != kFixed4Nodes) fail(rec, "fixed4 requires exactly 4 nodes, got " + std::to_string(n));
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (!rec.adjacency[i][j]) fail(rec, "fixed4 requires every node connected to all predecessors");
      const int edges = n * (n - 1) / 2;
      if (static_cast<int>(rec.op_codes.size()) != edges) {
        fail(rec, "fixed4 needs one op code per edge (" + std::to_string(edges) + "), got " +
                      std::to_string(rec.op_codes.size()));
      }
      for (int code : rec.op_codes)
        if (code < 0 || code > 4) fail(rec, "fixed4 op codes must be in 0..4, got " + std::to_string(code));
      check_cells(rec, kFixed4Cells);
      break;
    }
    case Family::synth: {
      if (static_cast<int>(rec.op_codes.size()) != n) fail(rec, "node count mismatch between adjacency and op codes");
      for (int code : rec.op_codes)
        if (code < 1 || code > 5) fail(rec, "synth op codes must be in 1..5, got " + std::to_string(code));
      if (rec.cells.empty()) fail(rec, "synth records need at least one cell");
      check_cells(rec, static_cast<int>(rec.cells.size()));
      break;
    }
  }
}

std::string structure_key(const ArchitectureRecord& rec) {
  std::ostringstream os;
  os << family_name(rec.family) << ':' << rec.node_count() << ':';
  for (const auto& row : rec.adjacency)
    for (std::uint8_t a : row) os << (a ? '1' : '0');
  os << ':';
  for (int code : rec.op_codes) os << code << '.';
  return os.str();
}

FeatureTensor encode_dag7(const ArchitectureRecord& rec) {
  if (rec.family != Family::dag7) {
    throw std::invalid_argument("encode_dag7 expects a dag7 record, got family " + family_name(rec.family));
  }
  validate_record(rec);
  // pad the adjacency/vectors up to 7 nodes with zeros
  ArchitectureRecord padded = rec;
  const int n = rec.node_count();
  if (n < kDag7Nodes) {
    padded.adjacency.assign(kDag7Nodes, std::vector<std::uint8_t>(kDag7Nodes, 0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) padded.adjacency[i][j] = rec.adjacency[i][j];
    padded.op_codes.resize(kDag7Nodes, 0);
    for (CellProfile& cell : padded.cells) {
      cell.flops.resize(kDag7Nodes, 0.0);
      cell.params.resize(kDag7Nodes, 0.0);
    }
  }
  return encode_cells(padded, kDag7Nodes);
}

FeatureTensor encode_fixed4(const ArchitectureRecord& rec) {
  if (rec.family != Family::fixed4) {
    throw std::invalid_argument("encode_fixed4 expects a fixed4 record, got family " + family_name(rec.family));
  }
  validate_record(rec);
  FeatureTensor out;
  out.channels = 1 + 2 * kFixed4Cells;
  out.resolution = kFixed4Nodes;
  out.values.assign(static_cast<std::size_t>(out.channels) * kFixed4Nodes * kFixed4Nodes, 0.0);

  // fixed4 ops annotate edges directly; (i, j) holds the code of edge i -> j
  int e = 0;
  for (int i = 0; i < kFixed4Nodes; ++i)
    for (int j = i + 1; j < kFixed4Nodes; ++j) out.at(0, i, j) = static_cast<double>(rec.op_codes[e++]);

  int channel = 1;
  for (const CellProfile& cell : rec.cells) {
    broadcast_channel(rec, cell.flops, channel, out);
    broadcast_channel(rec, cell.params, channel + 1, out);
    channel += 2;
  }
  return out;
}

FeatureTensor encode_record(const ArchitectureRecord& rec) {
  switch (rec.family) {
    case Family::dag7: return encode_dag7(rec);
    case Family::fixed4: return encode_fixed4(rec);
    case Family::synth: {
      validate_record(rec);
      return encode_cells(rec, rec.node_count());
    }
  }
  throw std::logic_error("unknown family");
}

ChannelStats compute_channel_stats(const std::vector<FeatureTensor>& tensors) {
  if (tensors.empty()) throw std::invalid_argument("compute_channel_stats needs at least one tensor");
  const int channels = tensors[0].channels;
  const int res = tensors[0].resolution;
  ChannelStats stats;
  stats.mean.assign(static_cast<std::size_t>(channels), 0.0);
  stats.stdev.assign(static_cast<std::size_t>(channels), 0.0);
  const std::size_t per_channel = static_cast<std::size_t>(res) * res;
  const double count = static_cast<double>(per_channel * tensors.size());
  for (const FeatureTensor& t : tensors) {
    if (t.channels != channels || t.resolution != res)
      throw std::invalid_argument("compute_channel_stats tensors must share one shape");
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < per_channel; ++i)
        stats.mean[static_cast<std::size_t>(c)] += t.values[static_cast<std::size_t>(c) * per_channel + i];
  }
  for (double& m : stats.mean) m /= count;
  for (const FeatureTensor& t : tensors) {
    for (int c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < per_channel; ++i) {
        const double d = t.values[static_cast<std::size_t>(c) * per_channel + i] - stats.mean[static_cast<std::size_t>(c)];
        stats.stdev[static_cast<std::size_t>(c)] += d * d;
      }
  }
  for (double& s : stats.stdev) {
    s = std::sqrt(s / count);
    if (s < 1e-8) s = 1.0;  // constant channels pass through unscaled
  }
  return stats;
}

FeatureTensor standardize(const FeatureTensor& t, const ChannelStats& stats) {
  if (stats.empty()) return t;
  if (static_cast<int>(stats.mean.size()) != t.channels)
    throw std::invalid_argument("channel statistics do not match tensor channels");
  FeatureTensor out = t;
  const std::size_t per_channel = static_cast<std::size_t>(t.resolution) * t.resolution;
  for (int c = 0; c < t.channels; ++c)
    for (std::size_t i = 0; i < per_channel; ++i) {
      double& v = out.values[static_cast<std::size_t>(c) * per_channel + i];
      v = (v - stats.mean[static_cast<std::size_t>(c)]) / stats.stdev[static_cast<std::size_t>(c)];
    }
  return out;
}

Tensor flatten_patches(const FeatureTensor& t) {
  const int p2 = t.resolution * t.resolution;
  Tensor out = Tensor::zeros({t.channels, p2});
  for (int c = 0; c < t.channels; ++c)
    for (int i = 0; i < p2; ++i)
      out.at(c, i) = t.values[static_cast<std::size_t>(c) * p2 + i];
  return out;
}

Tensor sinusoid_table(int positions, int dim) {
  Tensor out = Tensor::zeros({positions, dim});
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      out.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

Tensor patchify(const FeatureTensor& t, const Tensor& proj, const Tensor& pos) {
  Tensor flat = flatten_patches(t);
  if (proj.rows() != flat.cols()) {
    throw std::invalid_argument("patchify projection expects " + std::to_string(flat.cols()) + " rows, got " +
                                shape_str(proj));
  }
  Tensor out = matmul(flat, proj);
  if (!pos.same_shape(out)) {
    throw std::invalid_argument("positional table " + shape_str(pos) + " does not match embedded patches " +
                                shape_str(out));
  }
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += pos.data[i];
  return out;
}

}  // namespace nar
