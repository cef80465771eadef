#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nar/bench_data.hpp"
#include "nar/model.hpp"
#include "nar/optim.hpp"
#include "nar/tiers.hpp"

namespace nar {

struct TrainConfig {
  int batch_size = 64;
  int epochs = 30;
  OptimizerConfig optimizer;
  double grad_clip = 5.0;  // global norm; <= 0 disables
  int histogram_bins = 10;
  std::uint64_t seed = 1;

  void validate(int tiers) const;
};

// Per-batch quality tiers: sort descending by accuracy (ties by id), split
// into `tiers` contiguous groups whose sizes differ by at most one, the
// remainder going to the best groups. Returns the 0-based tier per element.
std::vector<int> build_labels(const std::vector<double>& accuracies, const std::vector<std::string>& ids,
                              int tiers);

struct TrainingBatch {
  std::vector<const FeatureTensor*> features;  // raw (unstandardized) encodings
  std::vector<double> accuracies;
  std::vector<int> labels;
};

struct BatchLoss {
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  std::vector<double> scores;
};

// Loss of one batch without gradients; the finite-difference oracle drives
// this directly.
BatchLoss batch_loss(const NarModel& model, const std::vector<TierBucket>& buckets, const TrainingBatch& batch,
                     bool training = false, std::uint64_t dropout_seed = 0);

struct BatchGradients {
  BatchLoss loss;
  std::vector<Tensor> grads;     // aligned with model.params
  std::vector<Tensor> features;  // encoder output per record, for bucket updates
};

// Exact gradient of l2 + ranking_weight * l1 over the batch. Per-record
// backward passes are seeded with the cross-entropy share and the analytic
// ranking-loss gradient of the record's score.
BatchGradients batch_gradients(const NarModel& model, const std::vector<TierBucket>& buckets,
                               const TrainingBatch& batch, bool training = false,
                               std::uint64_t dropout_seed = 0);

struct IterationLog {
  long long iteration = 0;
  int epoch = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::vector<long long> tier_counts;
};

struct TrainResult {
  NarModel model;
  std::vector<TierBucket> buckets;
  std::vector<IterationLog> log;
};

TrainResult train(const std::vector<ArchitectureRecord>& records, const ModelConfig& model_config,
                  const TrainConfig& train_config);

// Kendall tau-a over pairs with distinct truths; score ties contribute zero.
// Rejects all-tied truths.
double kendall_tau(const std::vector<double>& scores, const std::vector<double>& truths);

struct Metrics {
  double tau = 0.0;
  double tier_accuracy = 0.0;
  double adjacent_accuracy = 0.0;
  std::size_t count = 0;
};

// Scores and classifies the records with frozen state; tier accuracy is
// measured against quantile labels of the validation set itself.
Metrics validate(const NarModel& model, const std::vector<TierBucket>& buckets,
                 const std::vector<ArchitectureRecord>& records);

}  // namespace nar
