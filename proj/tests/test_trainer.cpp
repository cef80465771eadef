#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nar/bench_data.hpp"
#include "nar/trainer.hpp"

using namespace nar;

namespace {

ModelConfig desk_config() {
  ModelConfig c;
  c.layers = 1;
  c.dim = 16;
  c.heads = 2;
  c.ffn_dim = 24;
  c.tiers = 5;
  c.channels = 5;  // 1 + 2 * 2 cells
  c.patch = 5;
  c.dropout = 0.0;
  c.family = Family::synth;
  return c;
}

SyntheticSpec desk_space_spec() {
  SyntheticSpec spec;
  spec.nodes = 5;
  spec.max_edges = 5;
  spec.cells = 2;
  spec.seed = 9;
  return spec;
}

std::vector<ArchitectureRecord> desk_records(std::size_t n) {
  const SyntheticSpace synth = generate_synthetic(desk_space_spec());
  std::vector<ArchitectureRecord> out;
  const std::size_t stride = synth.space.records.size() / n;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth.space.records[i * stride]);
  return out;
}

}  // namespace

TEST_CASE("labels split a batch into near-equal tiers, best first") {
  SUBCASE("even split of ten") {
    std::vector<double> acc = {0.1, 0.9, 0.3, 0.8, 0.5, 0.6, 0.2, 0.7, 0.4, 0.95};
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("r" + std::to_string(i));
    const std::vector<int> labels = build_labels(acc, ids, 5);
    CHECK(labels[9] == 0);  // 0.95
    CHECK(labels[1] == 0);  // 0.9
    CHECK(labels[3] == 1);  // 0.8
    CHECK(labels[0] == 4);  // 0.1
    std::vector<int> counts(5, 0);
    for (int l : labels) counts[static_cast<std::size_t>(l)]++;
    for (int c : counts) CHECK(c == 2);
  }
  SUBCASE("remainder goes to the top tiers") {
    std::vector<double> acc = {0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
    std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f", "g"};
    const std::vector<int> labels = build_labels(acc, ids, 5);
    std::vector<int> counts(5, 0);
    for (int l : labels) counts[static_cast<std::size_t>(l)]++;
    CHECK(counts == std::vector<int>{2, 2, 1, 1, 1});
  }
  SUBCASE("full ties are broken by id deterministically") {
    std::vector<double> acc(7, 0.5);
    std::vector<std::string> ids = {"g", "f", "e", "d", "c", "b", "a"};
    const std::vector<int> labels = build_labels(acc, ids, 5);
    std::vector<int> counts(5, 0);
    for (int l : labels) counts[static_cast<std::size_t>(l)]++;
    CHECK(counts == std::vector<int>{2, 2, 1, 1, 1});
    CHECK(labels[6] == 0);  // id "a" sorts first
    CHECK(labels[5] == 0);
    CHECK(labels[0] == 4);  // id "g" sorts last
  }
  SUBCASE("batches smaller than the tier count are rejected") {
    CHECK_THROWS_AS(build_labels({0.1, 0.2}, {"a", "b"}, 5), std::invalid_argument);
  }
}

TEST_CASE("initial losses with zeroed heads hit the analytic values") {
  const ModelConfig mc = desk_config();
  NarModel model = init_model(mc, 3);
  for (double& v : model.param("head.score.w2").data) v = 0.0;
  for (double& v : model.param("head.tier.w2").data) v = 0.0;
  std::vector<TierBucket> buckets = init_buckets(mc);

  const std::vector<ArchitectureRecord> records = desk_records(8);
  std::vector<FeatureTensor> encoded;
  for (const ArchitectureRecord& r : records) encoded.push_back(encode_record(r));

  TrainingBatch batch;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    batch.features.push_back(&encoded[i]);
    batch.accuracies.push_back(*records[i].accuracy());
    ids.push_back(records[i].id);
  }
  batch.labels = build_labels(batch.accuracies, ids, mc.tiers);

  const BatchLoss loss = batch_loss(model, buckets, batch);
  CHECK(std::abs(loss.l2 - std::log(5.0)) < 1e-6);
  const double pairs = 8.0 * 7.0 / 2.0;
  CHECK(loss.l1 == doctest::Approx(pairs * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("batch gradients match finite differences through the whole loss") {
  const ModelConfig mc = desk_config();
  NarModel model = init_model(mc, 5);
  std::vector<TierBucket> buckets = init_buckets(mc);
  // nonzero embeddings so the decoder path is exercised
  for (TierBucket& b : buckets) {
    Rng r(17 + static_cast<std::uint64_t>(b.tier));
    for (double& v : b.embedding.data) v = r.uniform(-0.3, 0.3);
  }

  const std::vector<ArchitectureRecord> records = desk_records(6);
  std::vector<FeatureTensor> encoded;
  for (const ArchitectureRecord& r : records) encoded.push_back(encode_record(r));
  TrainingBatch batch;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    batch.features.push_back(&encoded[i]);
    batch.accuracies.push_back(*records[i].accuracy());
    ids.push_back(records[i].id);
  }
  batch.labels = build_labels(batch.accuracies, ids, mc.tiers);

  const BatchGradients bg = batch_gradients(model, buckets, batch);
  CHECK(std::isfinite(bg.loss.total));

  Rng pick(99);
  const double step = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    Tensor& tensor = model.params[p].second;
    const int probes = tensor.numel() < 3 ? static_cast<int>(tensor.numel()) : 3;
    for (int probe = 0; probe < probes; ++probe) {
      const std::size_t j = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(tensor.numel())));
      const double saved = tensor.data[j];
      tensor.data[j] = saved + step;
      const double up = batch_loss(model, buckets, batch).total;
      tensor.data[j] = saved - step;
      const double down = batch_loss(model, buckets, batch).total;
      tensor.data[j] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double err = std::abs(bg.grads[p].data[j] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("one training iteration books one histogram pair per nonempty tier") {
  const ModelConfig mc = desk_config();
  TrainConfig tc;
  tc.batch_size = 10;
  tc.epochs = 1;
  tc.optimizer.model_dim = mc.dim;
  tc.seed = 2;
  const std::vector<ArchitectureRecord> records = desk_records(10);
  const TrainResult result = train(records, mc, tc);
  for (const TierBucket& bucket : result.buckets) {
    CHECK(bucket.flops_histograms.size() == 1);
    CHECK(bucket.params_histograms.size() == 1);
    CHECK(bucket.feature_count == 2);  // 10 records over 5 tiers
    CHECK_FALSE(bucket.op_counts.empty());
  }
  CHECK(result.log.size() == 1);
  CHECK(result.log[0].tier_counts == std::vector<long long>{2, 2, 2, 2, 2});
}

TEST_CASE("training is deterministic and the loss goes down") {
  const ModelConfig mc = desk_config();
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 8;
  tc.optimizer.model_dim = mc.dim;
  tc.optimizer.warmup_steps = 8;
  tc.seed = 7;
  const std::vector<ArchitectureRecord> records = desk_records(64);

  const TrainResult a = train(records, mc, tc);
  const TrainResult b = train(records, mc, tc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].total == b.log[i].total);  // bitwise equal runs
  }
  for (std::size_t t = 0; t < a.buckets.size(); ++t) {
    CHECK(a.buckets[t].feature_count == b.buckets[t].feature_count);
    for (std::size_t j = 0; j < a.buckets[t].embedding.data.size(); ++j) {
      CHECK(a.buckets[t].embedding.data[j] == b.buckets[t].embedding.data[j]);
    }
  }

  const std::size_t per_epoch = a.log.size() / static_cast<std::size_t>(tc.epochs);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < per_epoch; ++i) first += a.log[i].total;
  for (std::size_t i = a.log.size() - per_epoch; i < a.log.size(); ++i) last += a.log[i].total;
  CHECK(last < first);
}

TEST_CASE("training rejects records without accuracy") {
  const ModelConfig mc = desk_config();
  TrainConfig tc;
  std::vector<ArchitectureRecord> records = desk_records(10);
  records[3].accuracy_validation.reset();
  records[3].accuracy_test.reset();
  CHECK_THROWS_WITH_AS(train(records, mc, tc), doctest::Contains(records[3].id.c_str()), std::invalid_argument);
}

TEST_CASE("kendall tau endpoints and the independence null") {
  CHECK(kendall_tau({1.0, 2.0, 3.0, 4.0}, {0.1, 0.2, 0.3, 0.4}) == 1.0);
  CHECK(kendall_tau({4.0, 3.0, 2.0, 1.0}, {0.1, 0.2, 0.3, 0.4}) == -1.0);
  CHECK_THROWS_AS(kendall_tau({1.0, 2.0}, {0.5, 0.5}), std::invalid_argument);

  // independent scores over 1e4 sampled (score, truth) pairs stay near zero
  Rng rng(123);
  std::vector<double> scores(10000), truths(10000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform();
    truths[i] = rng.uniform();
  }
  CHECK(std::abs(kendall_tau(scores, truths)) < 0.05);
}

TEST_CASE("validation metrics against a constant classifier") {
  const ModelConfig mc = desk_config();
  NarModel model = init_model(mc, 3);
  for (double& v : model.param("head.tier.w2").data) v = 0.0;  // uniform logits: argmax picks tier 0
  std::vector<TierBucket> buckets = init_buckets(mc);
  std::vector<ArchitectureRecord> records = desk_records(50);
  std::vector<FeatureTensor> encoded;
  for (const ArchitectureRecord& r : records) encoded.push_back(encode_record(r));
  model.norm = compute_channel_stats(encoded);

  const Metrics m = validate(model, buckets, records);
  CHECK(m.count == 50);
  CHECK(m.tier_accuracy == doctest::Approx(0.2).epsilon(1e-12));        // constant tier 0 hits its own quantile
  CHECK(m.adjacent_accuracy == doctest::Approx(0.4).epsilon(1e-12));    // tiers 0 and 1
  CHECK_THROWS_AS(validate(model, buckets, {}), std::invalid_argument);
}
