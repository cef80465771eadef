#include "nar/model.hpp"

#include <cmath>
#include <stdexcept>

namespace nar {

namespace {

constexpr double kLayerNormEps = 1e-5;

void xavier_fill(Tensor& t, Rng& rng) {
  const double bound = std::sqrt(6.0 / (t.rows() + t.cols()));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

struct Builder {
  std::vector<std::pair<std::string, Tensor>>& params;
  Rng& rng;

  void linear(const std::string& name, int in, int out) {
    Tensor t = Tensor::zeros({in, out});
    xavier_fill(t, rng);
    params.emplace_back(name, std::move(t));
  }
  void layer_norm(const std::string& name, int dim) {
    params.emplace_back(name + ".gain", Tensor::full({1, dim}, 1.0));
    params.emplace_back(name + ".bias", Tensor::zeros({1, dim}));
  }
  void attention(const std::string& name, int dim) {
    linear(name + ".wq", dim, dim);
    linear(name + ".wk", dim, dim);
    linear(name + ".wv", dim, dim);
    linear(name + ".wo", dim, dim);
  }
};

// Shared forward-construction context.
struct Ctx {
  Tape& tape;
  const ParamVars& pv;
  const NarModel& model;
  const ForwardOptions& opts;

  Var p(const std::string& name) const { return pv.vars[model.param_index(name)]; }

  Var drop(Var x) const {
    if (!opts.training || model.config.dropout <= 0.0) return x;
    if (opts.dropout_rng == nullptr) throw std::invalid_argument("training forward needs a dropout rng");
    return tape.dropout(x, model.config.dropout, *opts.dropout_rng);
  }

  Var ln(Var x, const std::string& name) const {
    return tape.layer_norm(x, p(name + ".gain"), p(name + ".bias"), kLayerNormEps);
  }

  // Multi-headed attention; queries from q_src, keys/values from kv_src.
  Var msa(Var q_src, Var kv_src, const std::string& name) const {
    const int dim = model.config.dim;
    const int heads = model.config.heads;
    const int dh = dim / heads;
    Var q = tape.matmul(q_src, p(name + ".wq"));
    Var k = tape.matmul(kv_src, p(name + ".wk"));
    Var v = tape.matmul(kv_src, p(name + ".wv"));
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
      Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
      Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
      outs.push_back(tape.attention(qh, kh, vh));
    }
    return tape.matmul(tape.concat(outs, 1), p(name + ".wo"));
  }

  Var ffn(Var x, const std::string& name) const {
    return tape.matmul(tape.relu(tape.matmul(x, p(name + ".w1"))), p(name + ".w2"));
  }
};

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || dim < 1 || heads < 1 || ffn_dim < 1 || channels < 1 || patch < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (dim % heads != 0) throw std::invalid_argument("model dim must be divisible by the head count");
  if (tiers < 2) throw std::invalid_argument("at least 2 tiers required");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (ranking_weight < 0.0) throw std::invalid_argument("ranking weight must be nonnegative");
}

std::size_t NarModel::param_index(const std::string& name) const {
  if (index_.size() != params.size()) {
    index_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) index_[params[i].first] = i;
  }
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Tensor& NarModel::param(const std::string& name) { return params[param_index(name)].second; }
const Tensor& NarModel::param(const std::string& name) const { return params[param_index(name)].second; }

NarModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  NarModel m;
  m.config = config;
  Rng rng(seed);
  Builder b{m.params, rng};

  b.linear("embed.proj", config.patch * config.patch, config.dim);
  for (int l = 0; l < config.layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    b.layer_norm(pre + ".ln1", config.dim);
    b.attention(pre + ".attn", config.dim);
    b.layer_norm(pre + ".ln2", config.dim);
    b.linear(pre + ".ffn.w1", config.dim, config.ffn_dim);
    b.linear(pre + ".ffn.w2", config.ffn_dim, config.dim);
  }
  b.layer_norm("enc.final", config.dim);
  for (int l = 0; l < config.layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    b.layer_norm(pre + ".ln1", config.dim);
    b.attention(pre + ".self", config.dim);
    b.layer_norm(pre + ".ln2", config.dim);
    b.attention(pre + ".cross", config.dim);
    b.layer_norm(pre + ".ln3", config.dim);
    b.linear(pre + ".ffn.w1", config.dim, config.ffn_dim);
    b.linear(pre + ".ffn.w2", config.ffn_dim, config.dim);
  }
  b.layer_norm("dec.final", config.dim);
  b.linear("head.score.w1", config.dim, config.dim);
  b.linear("head.score.w2", config.dim, 1);
  b.linear("head.tier.w1", config.dim, config.dim);
  b.linear("head.tier.w2", config.dim, config.tiers);

  m.pos = sinusoid_table(config.channels, config.dim);
  return m;
}

std::vector<TierBucket> init_buckets(const ModelConfig& config) {
  std::vector<TierBucket> buckets(static_cast<std::size_t>(config.tiers));
  for (int i = 0; i < config.tiers; ++i) {
    buckets[static_cast<std::size_t>(i)].tier = i;
    buckets[static_cast<std::size_t>(i)].embedding = Tensor::zeros({config.channels, config.dim});
  }
  return buckets;
}

ParamVars register_params(Tape& tape, const NarModel& model) {
  ParamVars pv;
  pv.vars.reserve(model.params.size());
  for (const auto& [name, tensor] : model.params) pv.vars.push_back(tape.param(tensor));
  return pv;
}

Var patchify_on_tape(Tape& tape, const ParamVars& pv, const NarModel& model, const FeatureTensor& standardized) {
  if (standardized.channels != model.config.channels || standardized.resolution != model.config.patch) {
    throw std::invalid_argument("feature tensor " + std::to_string(standardized.channels) + "x" +
                                std::to_string(standardized.resolution) + "^2 does not match model config " +
                                std::to_string(model.config.channels) + "x" + std::to_string(model.config.patch) +
                                "^2");
  }
  Ctx ctx{tape, pv, model, ForwardOptions{}};
  Var flat = tape.input(flatten_patches(standardized));
  return tape.add(tape.matmul(flat, ctx.p("embed.proj")), tape.input(model.pos));
}

Var encoder_forward(Tape& tape, const ParamVars& pv, const NarModel& model, Var x0, const ForwardOptions& opts) {
  Ctx ctx{tape, pv, model, opts};
  Var x = ctx.drop(x0);
  for (int l = 0; l < model.config.layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    Var normed = ctx.ln(x, pre + ".ln1");
    x = tape.add(x, ctx.drop(ctx.msa(normed, normed, pre + ".attn")));
    x = tape.add(x, ctx.drop(ctx.ffn(ctx.ln(x, pre + ".ln2"), pre + ".ffn")));
  }
  return ctx.ln(x, "enc.final");
}

Var score_head(Tape& tape, const ParamVars& pv, const NarModel& model, Var feature) {
  Ctx ctx{tape, pv, model, ForwardOptions{}};
  Var pooled = tape.mean(feature, 0);
  return tape.matmul(tape.relu(tape.matmul(pooled, ctx.p("head.score.w1"))), ctx.p("head.score.w2"));
}

Var decoder_forward(Tape& tape, const ParamVars& pv, const NarModel& model, Var tier_stream, Var feature,
                    const ForwardOptions& opts) {
  Ctx ctx{tape, pv, model, opts};
  Var z = tier_stream;
  for (int l = 0; l < model.config.layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    Var normed = ctx.ln(z, pre + ".ln1");
    Var q = tape.add(z, ctx.drop(ctx.msa(normed, normed, pre + ".self")));
    z = tape.add(q, ctx.drop(ctx.msa(ctx.ln(q, pre + ".ln2"), feature, pre + ".cross")));
    z = tape.add(z, ctx.drop(ctx.ffn(ctx.ln(z, pre + ".ln3"), pre + ".ffn")));
  }
  return ctx.ln(z, "dec.final");
}

Var tier_logits_head(Tape& tape, const ParamVars& pv, const NarModel& model, const std::vector<Var>& tier_outputs) {
  if (static_cast<int>(tier_outputs.size()) != model.config.tiers) {
    throw std::invalid_argument("expected one decoder output per tier");
  }
  Ctx ctx{tape, pv, model, ForwardOptions{}};
  Var z = tier_outputs[0];
  for (std::size_t i = 1; i < tier_outputs.size(); ++i) z = tape.add(z, tier_outputs[i]);
  Var pooled = tape.mean(z, 0);
  return tape.matmul(tape.relu(tape.matmul(pooled, ctx.p("head.tier.w1"))), ctx.p("head.tier.w2"));
}

RecordForward forward_record(Tape& tape, const ParamVars& pv, const NarModel& model,
                             const std::vector<TierBucket>& buckets, const FeatureTensor& raw,
                             const ForwardOptions& opts, int label) {
  if (static_cast<int>(buckets.size()) != model.config.tiers) {
    throw std::invalid_argument("bucket count does not match the configured tiers");
  }
  RecordForward out;
  Var x0 = patchify_on_tape(tape, pv, model, standardize(raw, model.norm));
  out.feature = encoder_forward(tape, pv, model, x0, opts);
  out.score = score_head(tape, pv, model, out.feature);

  std::vector<Var> tier_outputs;
  tier_outputs.reserve(buckets.size());
  for (const TierBucket& bucket : buckets) {
    // tier stream input: running-mean embedding plus the positional table
    Tensor stream = bucket.embedding;
    for (std::size_t i = 0; i < stream.data.size(); ++i) stream.data[i] += model.pos.data[i];
    tier_outputs.push_back(decoder_forward(tape, pv, model, tape.input(std::move(stream)), out.feature, opts));
  }
  out.logits = tier_logits_head(tape, pv, model, tier_outputs);
  out.log_probs = tape.log_softmax(out.logits, 1);

  if (label >= 0) {
    if (label >= model.config.tiers) {
      throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                  std::to_string(model.config.tiers) + " tiers");
    }
    Tensor pick = Tensor::zeros({1, model.config.tiers});
    pick.at(0, label) = -1.0;
    out.ce = tape.sum(tape.mul(out.log_probs, tape.input(std::move(pick))));
  }
  return out;
}

Prediction predict(const NarModel& model, const std::vector<TierBucket>& buckets, const ArchitectureRecord& rec) {
  Tape tape;
  ParamVars pv = register_params(tape, model);
  ForwardOptions opts;  // evaluation mode
  RecordForward fwd = forward_record(tape, pv, model, buckets, encode_record(rec), opts);
  Prediction p;
  p.score = tape.value(fwd.score).scalar_value();
  p.feature = tape.value(fwd.feature);
  const Tensor& lp = tape.value(fwd.log_probs);
  p.probs.resize(lp.data.size());
  int best = 0;
  for (std::size_t i = 0; i < lp.data.size(); ++i) {
    p.probs[i] = std::exp(lp.data[i]);
    if (p.probs[i] > p.probs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  p.tier = best;
  return p;
}

double ranking_loss(const std::vector<double>& scores, const std::vector<double>& truths) {
  if (scores.size() != truths.size()) throw std::invalid_argument("ranking_loss length mismatch");
  if (scores.size() < 2) throw std::invalid_argument("ranking_loss needs a batch of at least 2");
  double loss = 0.0;
  for (std::size_t m = 0; m + 1 < scores.size(); ++m) {
    for (std::size_t n = m + 1; n < scores.size(); ++n) {
      if (truths[m] == truths[n]) continue;  // tied ground truth: no preference, no loss
      const double sign = truths[m] > truths[n] ? 1.0 : -1.0;
      const double margin = (scores[m] - scores[n]) * sign;
      // log(1 + e^-margin), stable on both tails
      loss += margin > 0.0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
    }
  }
  return loss;
}

std::vector<double> ranking_loss_gradient(const std::vector<double>& scores, const std::vector<double>& truths) {
  if (scores.size() != truths.size()) throw std::invalid_argument("ranking_loss length mismatch");
  if (scores.size() < 2) throw std::invalid_argument("ranking_loss needs a batch of at least 2");
  std::vector<double> grad(scores.size(), 0.0);
  for (std::size_t m = 0; m + 1 < scores.size(); ++m) {
    for (std::size_t n = m + 1; n < scores.size(); ++n) {
      if (truths[m] == truths[n]) continue;
      const double sign = truths[m] > truths[n] ? 1.0 : -1.0;
      const double margin = (scores[m] - scores[n]) * sign;
      // d/dmargin log(1 + e^-margin) = -sigmoid(-margin)
      const double s = margin >= 0.0 ? std::exp(-margin) / (1.0 + std::exp(-margin))
                                     : 1.0 / (1.0 + std::exp(margin));
      grad[m] -= s * sign;
      grad[n] += s * sign;
    }
  }
  return grad;
}

double total_loss(const std::vector<std::vector<double>>& tier_probs, const std::vector<int>& labels, double l1,
                  double ranking_weight) {
  if (tier_probs.size() != labels.size() || tier_probs.empty()) {
    throw std::invalid_argument("total_loss needs aligned, nonempty probabilities and labels");
  }
  double ce = 0.0;
  for (std::size_t i = 0; i < tier_probs.size(); ++i) {
    const auto& p = tier_probs[i];
    if (labels[i] < 0 || labels[i] >= static_cast<int>(p.size())) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range for " +
                                  std::to_string(p.size()) + " tiers");
    }
    ce -= std::log(p[static_cast<std::size_t>(labels[i])]);
  }
  return ce / static_cast<double>(tier_probs.size()) + ranking_weight * l1;
}

}  // namespace nar
