#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nar/autodiff.hpp"
#include "nar/encoding.hpp"
#include "nar/tiers.hpp"

namespace nar {

struct ModelConfig {
  int layers = 6;
  int dim = 64;
  int heads = 4;
  int ffn_dim = 256;
  int tiers = 5;
  int channels = 19;  // N: patches per architecture
  int patch = 7;      // P: patch resolution
  double ranking_weight = 1.0;
  double dropout = 0.1;
  Family family = Family::dag7;

  void validate() const;
};

// All learnable state plus the fixed positional table and the input
// normalization statistics. Tier embeddings are NOT here: they are
// running-mean buffers owned by the TierBucket list and never receive
// gradients.
struct NarModel {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> params;
  Tensor pos;  // channels x dim sine/cosine table
  ChannelStats norm;

  std::size_t param_index(const std::string& name) const;
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
};

NarModel init_model(const ModelConfig& config, std::uint64_t seed);
std::vector<TierBucket> init_buckets(const ModelConfig& config);

// Parameters registered on one tape, aligned with NarModel::params.
struct ParamVars {
  std::vector<Var> vars;
};
ParamVars register_params(Tape& tape, const NarModel& model);

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

// x0 = flatten(x) E + E_pos on the tape, from an already-standardized tensor.
Var patchify_on_tape(Tape& tape, const ParamVars& pv, const NarModel& model, const FeatureTensor& standardized);

// Pre-norm residual encoder; returns the layer-normed architecture feature.
Var encoder_forward(Tape& tape, const ParamVars& pv, const NarModel& model, Var x0, const ForwardOptions& opts);

// Scalar relative metric from the pooled feature (no bias terms).
Var score_head(Tape& tape, const ParamVars& pv, const NarModel& model, Var feature);

// One tier stream through the decoder: self-attention, cross-attention
// against the architecture feature, feed-forward; layer-normed output.
Var decoder_forward(Tape& tape, const ParamVars& pv, const NarModel& model, Var tier_stream, Var feature,
                    const ForwardOptions& opts);

// Tier logits from the summed per-tier decoder outputs.
Var tier_logits_head(Tape& tape, const ParamVars& pv, const NarModel& model, const std::vector<Var>& tier_outputs);

struct RecordForward {
  Var feature;    // N x D architecture feature
  Var score;      // 1 x 1
  Var logits;     // 1 x tiers
  Var log_probs;  // 1 x tiers
  Var ce;         // 1 x 1 cross-entropy, only when a label was supplied
};

// Full forward pass for one record: standardize, patchify, encode, score,
// match against every tier embedding, classify. label < 0 skips the
// cross-entropy node.
RecordForward forward_record(Tape& tape, const ParamVars& pv, const NarModel& model,
                             const std::vector<TierBucket>& buckets, const FeatureTensor& raw,
                             const ForwardOptions& opts, int label = -1);

// Frozen-state inference for one record.
struct Prediction {
  double score = 0.0;
  int tier = 0;  // 0-based predicted tier
  std::vector<double> probs;
  Tensor feature;
};
Prediction predict(const NarModel& model, const std::vector<TierBucket>& buckets, const ArchitectureRecord& rec);

// Pairwise logistic ranking loss over a batch of scores: sum over pairs of
// log(1 + exp(-(s_m - s_n) * sign(y_m - y_n))), ties in y skipped.
double ranking_loss(const std::vector<double>& scores, const std::vector<double>& truths);
std::vector<double> ranking_loss_gradient(const std::vector<double>& scores, const std::vector<double>& truths);

// Mean cross-entropy of the simplex vectors against the labels, plus
// weight * l1.
double total_loss(const std::vector<std::vector<double>>& tier_probs, const std::vector<int>& labels, double l1,
                  double ranking_weight);

}  // namespace nar
