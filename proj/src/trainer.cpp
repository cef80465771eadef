#include "nar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>

namespace nar {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
  return a;
}

Rng record_dropout_rng(std::uint64_t dropout_seed, std::size_t record_index) {
  return Rng(mix(dropout_seed, 0x5851f42d4c957f2dULL + record_index));
}

struct ForwardResult {
  Tape tape;
  RecordForward handles;
};

ForwardResult run_forward(const NarModel& model, const std::vector<TierBucket>& buckets, const FeatureTensor& raw,
                          int label, bool training, std::uint64_t dropout_seed, std::size_t record_index) {
  ForwardResult r;
  ParamVars pv = register_params(r.tape, model);
  Rng rng = record_dropout_rng(dropout_seed, record_index);
  ForwardOptions opts;
  opts.training = training;
  opts.dropout_rng = &rng;
  r.handles = forward_record(r.tape, pv, model, buckets, raw, opts, label);
  return r;
}

void check_batch(const TrainingBatch& batch) {
  if (batch.features.empty() || batch.features.size() != batch.accuracies.size() ||
      batch.features.size() != batch.labels.size()) {
    throw std::invalid_argument("training batch fields must be nonempty and aligned");
  }
}

}  // namespace

void TrainConfig::validate(int tiers) const {
  if (batch_size < tiers) throw std::invalid_argument("batch size must be at least the tier count");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (histogram_bins < 1) throw std::invalid_argument("histogram bins must be positive");
}

std::vector<int> build_labels(const std::vector<double>& accuracies, const std::vector<std::string>& ids,
                              int tiers) {
  if (accuracies.size() != ids.size()) throw std::invalid_argument("build_labels length mismatch");
  const int k = static_cast<int>(accuracies.size());
  if (k < tiers) {
    throw std::invalid_argument("batch of " + std::to_string(k) + " cannot be split into " +
                                std::to_string(tiers) + " tiers");
  }
  std::vector<int> order(accuracies.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (accuracies[static_cast<std::size_t>(a)] != accuracies[static_cast<std::size_t>(b)])
      return accuracies[static_cast<std::size_t>(a)] > accuracies[static_cast<std::size_t>(b)];
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });

  std::vector<int> labels(accuracies.size(), 0);
  const int base = k / tiers;
  const int remainder = k % tiers;
  int cursor = 0;
  for (int tier = 0; tier < tiers; ++tier) {
    const int size = base + (tier < remainder ? 1 : 0);
    for (int i = 0; i < size; ++i) labels[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor++)])] = tier;
  }
  return labels;
}

BatchLoss batch_loss(const NarModel& model, const std::vector<TierBucket>& buckets, const TrainingBatch& batch,
                     bool training, std::uint64_t dropout_seed) {
  check_batch(batch);
  BatchLoss out;
  const std::size_t k = batch.features.size();
  out.scores.resize(k);
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    ForwardResult fr = run_forward(model, buckets, *batch.features[i], batch.labels[i], training, dropout_seed, i);
    out.scores[i] = fr.tape.value(fr.handles.score).scalar_value();
    ce_sum += fr.tape.value(fr.handles.ce).scalar_value();
  }
  out.l1 = ranking_loss(out.scores, batch.accuracies);
  out.l2 = ce_sum / static_cast<double>(k);
  out.total = out.l2 + model.config.ranking_weight * out.l1;
  return out;
}

BatchGradients batch_gradients(const NarModel& model, const std::vector<TierBucket>& buckets,
                               const TrainingBatch& batch, bool training, std::uint64_t dropout_seed) {
  check_batch(batch);
  BatchGradients out;
  const std::size_t k = batch.features.size();
  out.loss.scores.resize(k);
  out.features.reserve(k);
  out.grads.reserve(model.params.size());
  for (const auto& [name, p] : model.params) out.grads.push_back(Tensor::zeros(p.shape));

  // Pass 1: forward every record, keeping tapes when the batch fits in
  // memory comfortably; the ranking-loss gradient needs all scores first.
  std::vector<ForwardResult> kept;
  bool keep = true;
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    ForwardResult fr = run_forward(model, buckets, *batch.features[i], batch.labels[i], training, dropout_seed, i);
    out.loss.scores[i] = fr.tape.value(fr.handles.score).scalar_value();
    ce_sum += fr.tape.value(fr.handles.ce).scalar_value();
    out.features.push_back(fr.tape.value(fr.handles.feature));
    if (i == 0) {
      std::size_t bytes = 0;
      for (std::size_t n = 0; n < fr.tape.size(); ++n) bytes += fr.tape.value(Var{static_cast<int>(n)}).data.size();
      keep = bytes * sizeof(double) * 2 * k < (1ULL << 30);
    }
    if (keep) kept.push_back(std::move(fr));
  }
  out.loss.l1 = ranking_loss(out.loss.scores, batch.accuracies);
  out.loss.l2 = ce_sum / static_cast<double>(k);
  out.loss.total = out.loss.l2 + model.config.ranking_weight * out.loss.l1;

  const std::vector<double> rank_grad = ranking_loss_gradient(out.loss.scores, batch.accuracies);
  const double ce_share = 1.0 / static_cast<double>(k);

  // Pass 2: per-record backward seeded with d(total)/d(ce_i) and
  // d(total)/d(score_i); rebuilt tapes reproduce pass 1 bit for bit.
  // Params are the first nodes of every tape, in model order.
  const auto backward_into_grads = [&](ForwardResult& fr, std::size_t i) {
    fr.tape.backward({{fr.handles.ce, ce_share},
                      {fr.handles.score, model.config.ranking_weight * rank_grad[i]}});
    for (std::size_t p = 0; p < model.params.size(); ++p) {
      const Tensor& g = fr.tape.grad(Var{static_cast<int>(p)});
      Tensor& acc = out.grads[p];
      for (std::size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += g.data[j];
    }
  };
  for (std::size_t i = 0; i < k; ++i) {
    if (keep) {
      backward_into_grads(kept[i], i);
    } else {
      ForwardResult fr =
          run_forward(model, buckets, *batch.features[i], batch.labels[i], training, dropout_seed, i);
      backward_into_grads(fr, i);
    }
  }
  return out;
}

TrainResult train(const std::vector<ArchitectureRecord>& records, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
  model_config.validate();
  train_config.validate(model_config.tiers);
  if (records.size() < static_cast<std::size_t>(model_config.tiers)) {
    throw std::invalid_argument("training needs at least one batch of at least the tier count");
  }
  for (const ArchitectureRecord& rec : records) {
    if (!rec.accuracy()) throw std::invalid_argument("training record '" + rec.id + "' has no accuracy");
  }

  TrainResult result;
  result.model = init_model(model_config, train_config.seed);
  result.buckets = init_buckets(model_config);

  std::vector<FeatureTensor> encoded;
  encoded.reserve(records.size());
  for (const ArchitectureRecord& rec : records) encoded.push_back(encode_record(rec));
  result.model.norm = compute_channel_stats(encoded);

  OptimizerState opt = init_optimizer(train_config.optimizer, result.model.params);
  Rng shuffle_rng(mix(train_config.seed, 0xa076bc9d61a3ef1bULL));
  const std::size_t n = records.size();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(train_config.batch_size), n);
  const std::size_t batches = std::max<std::size_t>(1, n / k);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  long long iteration = 0;

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t b = 0; b < batches; ++b) {
      ++iteration;
      const std::size_t begin = b * k;
      const std::size_t size = std::min(k, n - begin);

      TrainingBatch batch;
      std::vector<std::string> ids;
      std::vector<const ArchitectureRecord*> members;
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t idx = order[begin + i];
        batch.features.push_back(&encoded[idx]);
        batch.accuracies.push_back(*records[idx].accuracy());
        ids.push_back(records[idx].id);
        members.push_back(&records[idx]);
      }
      batch.labels = build_labels(batch.accuracies, ids, model_config.tiers);

      const std::uint64_t dropout_seed = mix(train_config.seed, static_cast<std::uint64_t>(iteration));
      BatchGradients bg = batch_gradients(result.model, result.buckets, batch, true, dropout_seed);
      if (!std::isfinite(bg.loss.total)) {
        throw std::runtime_error("non-finite training loss at iteration " + std::to_string(iteration));
      }

      if (train_config.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const Tensor& g : bg.grads) norm_sq += l2_norm_squared(g);
        const double norm = std::sqrt(norm_sq);
        if (norm > train_config.grad_clip) {
          const double scale = train_config.grad_clip / norm;
          for (Tensor& g : bg.grads)
            for (double& v : g.data) v *= scale;
        }
      }

      const double lr = lr_at_step(opt.step + 1, train_config.optimizer.model_dim, train_config.optimizer.warmup_steps);
      adamw_step(result.model.params, bg.grads, opt, lr);

      // bucket bookkeeping from ground-truth tiers
      IterationLog log;
      log.iteration = iteration;
      log.epoch = epoch;
      log.l1 = bg.loss.l1;
      log.l2 = bg.loss.l2;
      log.total = bg.loss.total;
      log.lr = lr;
      log.tier_counts.assign(static_cast<std::size_t>(model_config.tiers), 0);
      for (int tier = 0; tier < model_config.tiers; ++tier) {
        std::vector<const Tensor*> tier_features;
        std::vector<double> tier_flops, tier_params;
        std::vector<int> tier_ops;
        for (std::size_t i = 0; i < size; ++i) {
          if (batch.labels[i] != tier) continue;
          tier_features.push_back(&bg.features[i]);
          tier_flops.push_back(members[i]->total_flops);
          tier_params.push_back(members[i]->total_params);
          tier_ops.insert(tier_ops.end(), members[i]->op_codes.begin(), members[i]->op_codes.end());
        }
        log.tier_counts[static_cast<std::size_t>(tier)] = static_cast<long long>(tier_features.size());
        TierBucket& bucket = result.buckets[static_cast<std::size_t>(tier)];
        update_tier_embedding(bucket, tier_features);
        if (!tier_flops.empty()) {
          bucket.flops_histograms.push_back(
              build_histogram(tier_flops, static_cast<int>(size), train_config.histogram_bins));
          bucket.params_histograms.push_back(
              build_histogram(tier_params, static_cast<int>(size), train_config.histogram_bins));
          update_op_counts(bucket, tier_ops, members[0]->family);
        }
      }
      result.log.push_back(std::move(log));
    }
  }
  return result;
}

double kendall_tau(const std::vector<double>& scores, const std::vector<double>& truths) {
  if (scores.size() != truths.size() || scores.size() < 2) {
    throw std::invalid_argument("kendall_tau needs two aligned sequences of length >= 2");
  }
  long long counted = 0;
  long long balance = 0;
  for (std::size_t m = 0; m + 1 < scores.size(); ++m) {
    for (std::size_t n = m + 1; n < scores.size(); ++n) {
      if (truths[m] == truths[n]) continue;  // no ground-truth preference
      ++counted;
      if (scores[m] == scores[n]) continue;  // tied prediction: neither concordant nor discordant
      const bool concordant = (scores[m] > scores[n]) == (truths[m] > truths[n]);
      balance += concordant ? 1 : -1;
    }
  }
  if (counted == 0) throw std::invalid_argument("kendall_tau undefined when every truth is tied");
  return static_cast<double>(balance) / static_cast<double>(counted);
}

Metrics validate(const NarModel& model, const std::vector<TierBucket>& buckets,
                 const std::vector<ArchitectureRecord>& records) {
  if (records.empty()) throw std::invalid_argument("validation set is empty");
  std::vector<double> scores, accuracies;
  std::vector<std::string> ids;
  std::vector<int> predicted;
  scores.reserve(records.size());
  for (const ArchitectureRecord& rec : records) {
    if (!rec.accuracy()) throw std::invalid_argument("validation record '" + rec.id + "' has no accuracy");
    Prediction p = predict(model, buckets, rec);
    scores.push_back(p.score);
    predicted.push_back(p.tier);
    accuracies.push_back(*rec.accuracy());
    ids.push_back(rec.id);
  }
  const std::vector<int> labels = build_labels(accuracies, ids, model.config.tiers);
  Metrics m;
  m.count = records.size();
  m.tau = kendall_tau(scores, accuracies);
  std::size_t exact = 0, adjacent = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (predicted[i] == labels[i]) ++exact;
    if (std::abs(predicted[i] - labels[i]) <= 1) ++adjacent;
  }
  m.tier_accuracy = static_cast<double>(exact) / static_cast<double>(records.size());
  m.adjacent_accuracy = static_cast<double>(adjacent) / static_cast<double>(records.size());
  return m;
}

}  // namespace nar
