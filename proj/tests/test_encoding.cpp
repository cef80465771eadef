#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nar/encoding.hpp"
#include "nar/rng.hpp"

using namespace nar;

namespace {

// 7-node dag7 record with distinct per-node profiles in every cell
ArchitectureRecord full_dag7() {
  ArchitectureRecord rec;
  rec.id = "dag7-full";
  rec.family = Family::dag7;
  rec.adjacency.assign(7, std::vector<std::uint8_t>(7, 0));
  const int edges[9][2] = {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {1, 4}, {3, 5}, {4, 5}, {5, 6}, {2, 6}};
  for (const auto& e : edges) rec.adjacency[e[0]][e[1]] = 1;
  rec.op_codes = {1, 2, 3, 4, 2, 3, 5};
  for (int c = 0; c < 9; ++c) {
    CellProfile cell;
    for (int v = 0; v < 7; ++v) {
      cell.flops.push_back(10.0 * (c + 1) + v);
      cell.params.push_back(0.5 * (c + 1) + 0.25 * v);
    }
    rec.cells.push_back(cell);
    for (int v = 0; v < 7; ++v) {
      rec.total_flops += cell.flops[static_cast<std::size_t>(v)];
      rec.total_params += cell.params[static_cast<std::size_t>(v)];
    }
  }
  rec.accuracy_validation = 0.91;
  return rec;
}

ArchitectureRecord small_dag7() {
  ArchitectureRecord rec = full_dag7();
  rec.id = "dag7-small";
  rec.adjacency.assign(5, std::vector<std::uint8_t>(5, 0));
  rec.adjacency[0][1] = rec.adjacency[1][2] = rec.adjacency[2][3] = rec.adjacency[3][4] = 1;
  rec.op_codes = {1, 2, 3, 4, 5};
  for (CellProfile& cell : rec.cells) {
    cell.flops.resize(5);
    cell.params.resize(5);
  }
  return rec;
}

ArchitectureRecord full_fixed4() {
  ArchitectureRecord rec;
  rec.id = "fixed4-full";
  rec.family = Family::fixed4;
  rec.adjacency.assign(4, std::vector<std::uint8_t>(4, 0));
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) rec.adjacency[i][j] = 1;
  rec.op_codes = {1, 2, 3, 4, 0, 2};
  for (int c = 0; c < 15; ++c) {
    CellProfile cell;
    for (int v = 0; v < 4; ++v) {
      cell.flops.push_back(5.0 * (c + 1) + 2.0 * v);
      cell.params.push_back(1.0 * (c + 1) + 0.1 * v);
    }
    rec.cells.push_back(cell);
  }
  rec.accuracy_test = 0.72;
  return rec;
}

}  // namespace

TEST_CASE("dag7 encoding has shape 19x7x7 with the broadcast layout") {
  const ArchitectureRecord rec = full_dag7();
  const FeatureTensor t = encode_dag7(rec);
  CHECK(t.channels == 19);
  CHECK(t.resolution == 7);
  // channel 0: source-node op on every edge, zero elsewhere
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      const double expect = rec.adjacency[i][j] ? static_cast<double>(rec.op_codes[static_cast<std::size_t>(i)]) : 0.0;
      CHECK(t.at(0, i, j) == expect);
    }
  // cell channels alternate flops/params in cell order
  for (int c = 0; c < 9; ++c)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) {
        const double mask = rec.adjacency[i][j] ? 1.0 : 0.0;
        CHECK(t.at(1 + 2 * c, i, j) == mask * rec.cells[static_cast<std::size_t>(c)].flops[static_cast<std::size_t>(i)]);
        CHECK(t.at(2 + 2 * c, i, j) == mask * rec.cells[static_cast<std::size_t>(c)].params[static_cast<std::size_t>(i)]);
      }
}

TEST_CASE("dag7 padding zeroes the missing rows and columns") {
  const FeatureTensor t = encode_dag7(small_dag7());
  CHECK(t.channels == 19);
  for (int c = 0; c < 19; ++c)
    for (int v = 5; v < 7; ++v)
      for (int j = 0; j < 7; ++j) {
        CHECK(t.at(c, v, j) == 0.0);
        CHECK(t.at(c, j, v) == 0.0);
      }
}

TEST_CASE("a zero flops vector gives a zero channel") {
  ArchitectureRecord rec = full_dag7();
  std::fill(rec.cells[3].flops.begin(), rec.cells[3].flops.end(), 0.0);
  const FeatureTensor t = encode_dag7(rec);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) CHECK(t.at(1 + 2 * 3, i, j) == 0.0);
}

TEST_CASE("dag7 encoder rejects bad records") {
  ArchitectureRecord rec = full_fixed4();
  CHECK_THROWS_AS(encode_dag7(rec), std::invalid_argument);

  ArchitectureRecord wide = full_dag7();
  wide.adjacency.assign(8, std::vector<std::uint8_t>(8, 0));
  wide.adjacency[0][1] = 1;
  wide.op_codes.assign(8, 2);
  wide.op_codes[0] = 1;
  wide.op_codes[7] = 5;
  CHECK_THROWS_WITH_AS(encode_dag7(wide), doctest::Contains("7 nodes"), std::invalid_argument);

  ArchitectureRecord busy = full_dag7();
  busy.adjacency[0][3] = busy.adjacency[0][4] = busy.adjacency[0][5] = 1;  // 12 edges
  CHECK_THROWS_WITH_AS(encode_dag7(busy), doctest::Contains("9 edges"), std::invalid_argument);

  ArchitectureRecord short_cells = full_dag7();
  short_cells.cells.pop_back();
  CHECK_THROWS_WITH_AS(encode_dag7(short_cells), doctest::Contains("9 cells"), std::invalid_argument);
}

TEST_CASE("fixed4 encoding has shape 31x4x4 with edge ops in channel 0") {
  const ArchitectureRecord rec = full_fixed4();
  const FeatureTensor t = encode_fixed4(rec);
  CHECK(t.channels == 31);  // 1 + 15 * 2
  CHECK(t.resolution == 4);
  int e = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) CHECK(t.at(0, i, j) == static_cast<double>(rec.op_codes[static_cast<std::size_t>(e++)]));
  CHECK(t.at(0, 1, 0) == 0.0);
  CHECK(t.at(0, 3, 3) == 0.0);
}

TEST_CASE("all-zeroize fixed4 cell zeroes channel 0") {
  ArchitectureRecord rec = full_fixed4();
  rec.op_codes.assign(6, 0);
  const FeatureTensor t = encode_fixed4(rec);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(t.at(0, i, j) == 0.0);
}

TEST_CASE("fixed4 encoder rejects a wrong cell count") {
  ArchitectureRecord rec = full_fixed4();
  rec.cells.resize(9);
  CHECK_THROWS_WITH_AS(encode_fixed4(rec), doctest::Contains("15 cells"), std::invalid_argument);
}

TEST_CASE("encoding is deterministic") {
  const ArchitectureRecord rec = full_dag7();
  const FeatureTensor a = encode_dag7(rec);
  const FeatureTensor b = encode_dag7(rec);
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("zeroing one node's profile only touches that cell's channels at its row/column") {
  ArchitectureRecord rec = full_dag7();
  const FeatureTensor base = encode_dag7(rec);
  const int node = 3, cell = 2;
  rec.cells[cell].flops[node] = 0.0;
  rec.cells[cell].params[node] = 0.0;
  const FeatureTensor poked = encode_dag7(rec);
  for (int c = 0; c < 19; ++c)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) {
        const bool may_change = (c == 1 + 2 * cell || c == 2 + 2 * cell) && (i == node || j == node);
        if (!may_change) CHECK(base.at(c, i, j) == poked.at(c, i, j));
      }
}

TEST_CASE("adjacency and source ops are recoverable from channel 0") {
  const ArchitectureRecord rec = full_dag7();  // every op code nonzero
  const FeatureTensor t = encode_dag7(rec);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      CHECK((t.at(0, i, j) != 0.0) == (rec.adjacency[i][j] == 1));
      if (rec.adjacency[i][j]) CHECK(t.at(0, i, j) == static_cast<double>(rec.op_codes[static_cast<std::size_t>(i)]));
    }
}

TEST_CASE("channel standardization and its statistics") {
  std::vector<FeatureTensor> tensors = {encode_dag7(full_dag7()), encode_dag7(small_dag7())};
  const ChannelStats stats = compute_channel_stats(tensors);
  REQUIRE(static_cast<int>(stats.mean.size()) == 19);
  const FeatureTensor z = standardize(tensors[0], stats);
  // channel 4 mean over both tensors should now be centered
  double total = 0.0;
  const FeatureTensor z2 = standardize(tensors[1], stats);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) total += z.at(4, i, j) + z2.at(4, i, j);
  CHECK(std::abs(total) < 1e-9);
}

TEST_CASE("patchify reference behavior") {
  const FeatureTensor t = encode_dag7(full_dag7());

  SUBCASE("zero tensor and zero positions give zeros") {
    FeatureTensor zero = t;
    std::fill(zero.values.begin(), zero.values.end(), 0.0);
    const Tensor out = patchify(zero, Tensor::full({49, 8}, 0.37), Tensor::zeros({19, 8}));
    for (double v : out.data) CHECK(v == 0.0);
  }
  SUBCASE("identity projection reproduces flattened channels") {
    Tensor eye = Tensor::zeros({49, 49});
    for (int i = 0; i < 49; ++i) eye.at(i, i) = 1.0;
    const Tensor out = patchify(t, eye, Tensor::zeros({19, 49}));
    const Tensor flat = flatten_patches(t);
    for (std::size_t i = 0; i < flat.data.size(); ++i) CHECK(out.data[i] == flat.data[i]);
  }
  SUBCASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(patchify(t, Tensor::zeros({48, 8}), Tensor::zeros({19, 8})), std::invalid_argument);
  }
}

TEST_CASE("sinusoid table row 0 alternates 0 and 1") {
  const Tensor pos = sinusoid_table(19, 10);
  for (int i = 0; i < 10; ++i) CHECK(pos.at(0, i) == (i % 2 == 0 ? 0.0 : 1.0));
}
