#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "nar/rng.hpp"
#include "nar/tiers.hpp"

using namespace nar;

namespace {

BatchHistogram two_bin(double m0, double m1, long long count) {
  BatchHistogram h;
  h.lo = 0.0;
  h.hi = 20.0;
  h.step = 10;
  h.batch_size = 10;
  h.member_count = count;
  h.masses = {m0, m1};
  return h;
}

TierBucket fresh_bucket(int rows, int cols) {
  TierBucket b;
  b.embedding = Tensor::zeros({rows, cols});
  return b;
}

}  // namespace

TEST_CASE("histogram worked example: values 10..40, batch 10, 3 bins") {
  const BatchHistogram h = build_histogram({10.0, 20.0, 30.0, 40.0}, 10, 3);
  CHECK(h.step == 10);
  CHECK(h.lo == 10.0);
  CHECK(h.hi == 40.0);
  REQUIRE(h.bins() == 3);
  // 10 sits in the closed first bin together with 20
  CHECK(h.masses[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(h.masses[1] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(h.masses[2] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("histogram step rounds up with a floor of one") {
  // range 9.6 over 3 bins: raw step 3.2 -> 4
  const BatchHistogram h = build_histogram({0.0, 9.6}, 4, 3);
  CHECK(h.step == 4);
  // tiny ranges still get an integer step
  const BatchHistogram tiny = build_histogram({5.0, 5.4}, 4, 10);
  CHECK(tiny.step == 1);
}

TEST_CASE("degenerate histogram collapses to one bin") {
  const BatchHistogram h = build_histogram({7.0, 7.0, 7.0}, 12, 5);
  REQUIRE(h.bins() == 1);
  CHECK(h.masses[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(h.lo == 7.0);
  CHECK(h.hi == 7.0);
}

TEST_CASE("histogram mass conservation") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int members = 1 + rng.uniform_int(40);
    const int batch = members + rng.uniform_int(60);
    std::vector<double> values;
    for (int i = 0; i < members; ++i) values.push_back(rng.uniform(0.0, 500.0));
    const BatchHistogram h = build_histogram(values, batch, 10);
    CHECK(h.member_count == members);
    // reconstructed integer counts match the member count exactly
    long long reconstructed = 0;
    for (double m : h.masses) reconstructed += std::llround(m * batch);
    CHECK(reconstructed == members);
    CHECK(std::abs(h.mass_sum() * batch - members) < 1e-9);
  }
}

TEST_CASE("histogram rejects bad input") {
  CHECK_THROWS_AS(build_histogram({}, 10, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_histogram({1.0, 2.0}, 1, 3), std::invalid_argument);
}

TEST_CASE("kl divergence of a histogram with itself is exactly zero") {
  const BatchHistogram h = build_histogram({10.0, 25.0, 30.0, 44.0, 44.0}, 10, 4);
  CHECK(kl_divergence(h, h) == 0.0);
}

TEST_CASE("kl divergence closed-form case on shared bins") {
  const BatchHistogram p = two_bin(0.5, 0.5, 10);
  const BatchHistogram q = two_bin(0.9, 0.1, 10);
  const double d = kl_divergence(p, q);
  // frozen oracle of the stated pipeline (1e-8 smoothing then renormalize),
  // computed independently at 50-digit precision; the unsmoothed closed form
  // 0.5*ln(0.5/0.9) + 0.5*ln(0.5/0.1) = 0.51082562376... sits 3.6e-8 above
  CHECK(std::abs(d - 0.51082558821043746) < 1e-9);
  CHECK(std::abs(d - 0.5108256237659907) < 1e-6);
}

TEST_CASE("disjoint supports exceed the selection threshold") {
  BatchHistogram a;
  a.lo = 0.0;
  a.hi = 10.0;
  a.step = 10;
  a.batch_size = 10;
  a.member_count = 10;
  a.masses = {1.0};
  BatchHistogram b = a;
  b.lo = 1000.0;
  b.hi = 1010.0;
  const double d = kl_divergence(a, b);
  CHECK(d > 2.5);
}

TEST_CASE("kl divergence is nonnegative on random histograms") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> va, vb;
    const int na = 2 + rng.uniform_int(20), nb = 2 + rng.uniform_int(20);
    for (int i = 0; i < na; ++i) va.push_back(rng.uniform(0.0, 300.0));
    for (int i = 0; i < nb; ++i) vb.push_back(rng.uniform(50.0, 400.0));
    const BatchHistogram a = build_histogram(va, 32, 10);
    const BatchHistogram b = build_histogram(vb, 32, 10);
    CHECK(kl_divergence(a, b) >= 0.0);
    CHECK(std::abs(kl_divergence(a, a)) == 0.0);
  }
}

TEST_CASE("tier embedding running mean matches the two-point examples") {
  SUBCASE("prior mean 2 with count 1, add a feature of 4 -> 3 everywhere") {
    TierBucket b = fresh_bucket(2, 3);
    b.embedding = Tensor::full({2, 3}, 2.0);
    b.feature_count = 1;
    const Tensor f = Tensor::full({2, 3}, 4.0);
    update_tier_embedding(b, {&f});
    for (double v : b.embedding.data) CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(b.feature_count == 2);
  }
  SUBCASE("empty update is a no-op") {
    TierBucket b = fresh_bucket(2, 3);
    b.embedding = Tensor::full({2, 3}, 1.25);
    b.feature_count = 7;
    update_tier_embedding(b, {});
    for (double v : b.embedding.data) CHECK(v == 1.25);
    CHECK(b.feature_count == 7);
  }
  SUBCASE("count 3 at mean 1, add two features of 4 -> 2.2") {
    TierBucket b = fresh_bucket(1, 4);
    b.embedding = Tensor::full({1, 4}, 1.0);
    b.feature_count = 3;
    const Tensor f = Tensor::full({1, 4}, 4.0);
    update_tier_embedding(b, {&f, &f});
    for (double v : b.embedding.data) CHECK(v == doctest::Approx(2.2).epsilon(1e-12));
  }
}

TEST_CASE("tier embedding equals a stored-features brute-force mean") {
  Rng rng(47);
  for (int sequence = 0; sequence < 100; ++sequence) {
    TierBucket b = fresh_bucket(3, 4);
    std::vector<Tensor> stored;
    const int updates = 1 + rng.uniform_int(12);
    for (int u = 0; u < updates; ++u) {
      const int n = rng.uniform_int(5);
      std::vector<Tensor> batch;
      for (int i = 0; i < n; ++i) {
        Tensor f = Tensor::zeros({3, 4});
        for (double& v : f.data) v = rng.uniform(-5.0, 5.0);
        batch.push_back(std::move(f));
      }
      std::vector<const Tensor*> ptrs;
      for (const Tensor& f : batch) ptrs.push_back(&f);
      update_tier_embedding(b, ptrs);
      for (Tensor& f : batch) stored.push_back(std::move(f));
    }
    if (stored.empty()) {
      CHECK(b.feature_count == 0);
      continue;
    }
    Tensor mean = Tensor::zeros({3, 4});
    for (const Tensor& f : stored)
      for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += f.data[i];
    for (double& v : mean.data) v /= static_cast<double>(stored.size());
    for (std::size_t i = 0; i < mean.data.size(); ++i) {
      const double rel = std::abs(b.embedding.data[i] - mean.data[i]) / std::max(1.0, std::abs(mean.data[i]));
      CHECK(rel < 1e-10);
    }
  }
}

TEST_CASE("op count bookkeeping") {
  TierBucket b = fresh_bucket(1, 1);
  update_op_counts(b, {}, Family::dag7);
  CHECK(b.op_counts.empty());
  update_op_counts(b, {2, 2, 3}, Family::dag7);
  CHECK(b.op_counts[2] == 2);
  CHECK(b.op_counts[3] == 1);
  long long total = 0;
  double normalized = 0.0;
  for (const auto& [code, count] : b.op_counts) total += count;
  for (const auto& [code, count] : b.op_counts) normalized += static_cast<double>(count) / static_cast<double>(total);
  CHECK(normalized == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(update_op_counts(b, {9}, Family::dag7), std::invalid_argument);
  CHECK_THROWS_AS(update_op_counts(b, {5}, Family::fixed4), std::invalid_argument);
}

TEST_CASE("distribution selection covers all three outcomes") {
  SelectionPolicy policy;  // kl 2.5, factor 0.1, compare from tier 4
  const int batch = 256;

  SUBCASE("sparse top tier keeps only the interval") {
    BatchHistogram sparse = two_bin(0.4, 0.1, 5);  // 5 < 0.1 * 256
    BatchHistogram other = two_bin(0.9, 0.1, 50);
    std::vector<const BatchHistogram*> hists = {&sparse, &other, &other, &other, &other};
    const DistributionChoice choice = select_distribution(hists, batch, policy);
    REQUIRE(std::holds_alternative<IntervalOnly>(choice));
    CHECK(std::get<IntervalOnly>(choice).lo == sparse.lo);
    CHECK(std::get<IntervalOnly>(choice).hi == sparse.hi);
  }
  SUBCASE("similar distributions keep only the interval") {
    BatchHistogram top = two_bin(0.5, 0.5, 100);
    BatchHistogram same = top;  // KL = 0 < 2.5 at tier 4
    std::vector<const BatchHistogram*> hists = {&top, &same, &same, &same, &same};
    CHECK(std::holds_alternative<IntervalOnly>(select_distribution(hists, batch, policy)));
  }
  SUBCASE("distinct well-populated top tier passes through in full") {
    BatchHistogram top;
    top.lo = 0.0;
    top.hi = 10.0;
    top.step = 10;
    top.batch_size = 256;
    top.member_count = 100;
    top.masses = {1.0};
    BatchHistogram far = top;
    far.lo = 5000.0;
    far.hi = 5010.0;
    std::vector<const BatchHistogram*> hists = {&top, &far, &far, &far, &far};
    const DistributionChoice choice = select_distribution(hists, batch, policy);
    REQUIRE(std::holds_alternative<FullDistribution>(choice));
    CHECK(std::get<FullDistribution>(choice).histogram.member_count == 100);
  }
  SUBCASE("a missing lower-tier histogram forces the interval fallback") {
    BatchHistogram top;
    top.lo = 0.0;
    top.hi = 10.0;
    top.step = 10;
    top.batch_size = 256;
    top.member_count = 100;
    top.masses = {1.0};
    std::vector<const BatchHistogram*> hists = {&top, &top, &top, nullptr, &top};
    CHECK(std::holds_alternative<IntervalOnly>(select_distribution(hists, batch, policy)));
  }
}

TEST_CASE("selection is deterministic for identical state") {
  SelectionPolicy policy;
  BatchHistogram top = two_bin(0.5, 0.5, 100);
  BatchHistogram far = two_bin(0.9, 0.1, 80);
  far.lo = 900.0;
  far.hi = 920.0;
  std::vector<const BatchHistogram*> hists = {&top, &far, &far, &far, &far};
  const DistributionChoice a = select_distribution(hists, 256, policy);
  const DistributionChoice b = select_distribution(hists, 256, policy);
  CHECK(a.index() == b.index());
}
