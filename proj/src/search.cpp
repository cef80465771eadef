#include "nar/search.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "nar/parallel.hpp"

#include <json.hpp>

namespace nar {

namespace {

using nlohmann::json;

struct PropertyState {
  DistributionChoice choice = IntervalOnly{0.0, 0.0};
  double bound = 0.0;
};

// Round-robin pick of one batch histogram per tier for this iteration;
// missing logs stay null and force the interval fallback downstream.
std::vector<const BatchHistogram*> histograms_at(const std::vector<TierBucket>& buckets, bool flops,
                                                 int iteration) {
  std::vector<const BatchHistogram*> hists;
  hists.reserve(buckets.size());
  for (const TierBucket& b : buckets) {
    const auto& log = flops ? b.flops_histograms : b.params_histograms;
    if (log.empty()) {
      hists.push_back(nullptr);
    } else {
      hists.push_back(&log[static_cast<std::size_t>(iteration - 1) % log.size()]);
    }
  }
  return hists;
}

int family_code_base(Family family) { return family == Family::fixed4 ? 0 : 2; }

}  // namespace

std::string search_mode_name(SearchMode m) {
  switch (m) {
    case SearchMode::random: return "random";
    case SearchMode::statistics: return "statistics";
    case SearchMode::interval: return "interval";
  }
  throw std::logic_error("unknown search mode");
}

SearchMode search_mode_from_name(const std::string& name) {
  if (name == "random") return SearchMode::random;
  if (name == "statistics") return SearchMode::statistics;
  if (name == "interval") return SearchMode::interval;
  throw std::invalid_argument("unknown search mode '" + name + "'");
}

void SearchConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("search needs at least one iteration");
  if (sample_size < 1) throw std::invalid_argument("sample size must be positive");
  if (random_fraction < 0.0 || random_fraction > 1.0) throw std::invalid_argument("random fraction must be in [0, 1]");
  if (constraint_reuse < 1 || constraint_reuse > sample_size) {
    throw std::invalid_argument("constraint reuse must be in [1, sample size]");
  }
  if (top_k < 1 || top_k > sample_size) throw std::invalid_argument("top-k must be in [1, sample size]");
  if (retry_cap < 0) throw std::invalid_argument("retry cap must be nonnegative");
}

double sample_bound(const DistributionChoice& choice, Rng& rng) {
  if (const auto* full = std::get_if<FullDistribution>(&choice)) {
    const BatchHistogram& h = full->histogram;
    const int bin = rng.categorical(h.masses);
    return h.bin_upper_edge(bin + 1);
  }
  const auto& interval = std::get<IntervalOnly>(choice);
  return rng.uniform(interval.lo, interval.hi);
}

std::vector<double> tier_op_distribution(const TierBucket& bucket, Family family) {
  const int base = family_code_base(family);
  const int count = family == Family::fixed4 ? 5 : 3;
  std::vector<double> dist(static_cast<std::size_t>(count), 0.0);
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    auto it = bucket.op_counts.find(base + i);
    const double smoothed = 1.0 + (it == bucket.op_counts.end() ? 0.0 : static_cast<double>(it->second));
    dist[static_cast<std::size_t>(i)] = smoothed;
    total += smoothed;
  }
  for (double& d : dist) d /= total;
  return dist;
}

ArchitectureRecord sample_cell_dag7(const std::vector<double>& op_dist, Rng& rng, int nodes, int max_edges,
                                    Family family) {
  if (nodes < 3) throw std::invalid_argument("dag7-style sampling needs at least 3 nodes");
  if (static_cast<int>(op_dist.size()) != 3) throw std::invalid_argument("dag7 op distribution covers codes 2..4");
  if (max_edges < nodes - 1) throw std::invalid_argument("edge budget below the spanning minimum");

  ArchitectureRecord rec;
  rec.family = family;
  rec.adjacency.assign(static_cast<std::size_t>(nodes),
                       std::vector<std::uint8_t>(static_cast<std::size_t>(nodes), 0));
  rec.op_codes.assign(static_cast<std::size_t>(nodes), 0);
  rec.op_codes[0] = 1;                                       // IN
  rec.op_codes[static_cast<std::size_t>(nodes - 1)] = 5;     // OUT

  // one predecessor and an op per node, walking from the second node on
  for (int v = 1; v < nodes; ++v) {
    const int u = rng.uniform_int(v);
    rec.adjacency[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] = 1;
    if (v < nodes - 1) rec.op_codes[static_cast<std::size_t>(v)] = 2 + rng.categorical(op_dist);
  }
  // spend the remaining edge budget on random distinct pairs, skipping
  // duplicates so the cap holds
  const int extra = max_edges - (nodes - 1);
  for (int e = 0; e < extra; ++e) {
    int a = rng.uniform_int(nodes);
    int b = rng.uniform_int(nodes - 1);
    if (b >= a) ++b;
    const int lo = std::min(a, b), hi = std::max(a, b);
    rec.adjacency[static_cast<std::size_t>(lo)][static_cast<std::size_t>(hi)] = 1;
  }
  return rec;
}

ArchitectureRecord sample_cell_fixed4(const std::vector<double>& op_dist, Rng& rng) {
  if (static_cast<int>(op_dist.size()) != 5) throw std::invalid_argument("fixed4 op distribution covers codes 0..4");
  ArchitectureRecord rec;
  rec.family = Family::fixed4;
  rec.adjacency.assign(4, std::vector<std::uint8_t>(4, 0));
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) rec.adjacency[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
  rec.op_codes.resize(6);
  for (int e = 0; e < 6; ++e) rec.op_codes[static_cast<std::size_t>(e)] = rng.categorical(op_dist);
  return rec;
}

SearchReport search(const NarModel& model, std::vector<TierBucket> buckets, const RecordSpace& space,
                    const SearchConfig& config, const Oracle& oracle_fn, const Classifier& classifier_fn) {
  config.validate();
  if (space.records.empty()) throw std::invalid_argument("search space is empty");
  const Family family = model.config.family;

  const Oracle oracle =
      oracle_fn ? oracle_fn : Oracle{[](const ArchitectureRecord& rec) { return rec.oracle_accuracy(); }};
  const Classifier classify = classifier_fn
                                  ? classifier_fn
                                  : Classifier{[&](const ArchitectureRecord& rec) {
                                      return predict(model, buckets, rec);
                                    }};

  Rng rng(config.seed);
  SearchReport report;
  report.mode = config.mode;
  report.seed = config.seed;
  std::unordered_map<std::string, double> answered;

  const int k = config.sample_size;
  const double effective_random = config.mode == SearchMode::random ? 1.0 : config.random_fraction;
  const int n_random = static_cast<int>(std::ceil(effective_random * k));
  const int n_guided = k - n_random;

  // structure sampler budget: dag7 cells are always built with the full
  // 7-node/9-edge layout; synth spaces carry a uniform node count and their
  // edge budget is recoverable as the largest materialized edge count
  int sample_nodes = 7, sample_max_edges = 9;
  if (family == Family::synth) {
    sample_nodes = space.records[0].node_count();
    sample_max_edges = 0;
    for (const ArchitectureRecord& r : space.records) sample_max_edges = std::max(sample_max_edges, r.edge_count());
  }

  for (int iteration = 1; iteration <= config.iterations; ++iteration) {
    IterationReport iter;
    iter.iteration = iteration;

    // distribution selection per property, on this iteration's round-robin
    // histogram set
    PropertyState flops_state, params_state;
    if (n_guided > 0) {
      const auto flops_hists = histograms_at(buckets, true, iteration);
      const auto params_hists = histograms_at(buckets, false, iteration);
      if (flops_hists[0] == nullptr || params_hists[0] == nullptr) {
        throw std::runtime_error("statistics-guided search needs trained top-tier histograms");
      }
      if (config.mode == SearchMode::interval) {
        flops_state.choice = IntervalOnly{flops_hists[0]->lo, flops_hists[0]->hi};
        params_state.choice = IntervalOnly{params_hists[0]->lo, params_hists[0]->hi};
      } else {
        flops_state.choice = select_distribution(flops_hists, k, config.selection);
        params_state.choice = select_distribution(params_hists, k, config.selection);
      }
    }
    const std::vector<double> op_dist = n_guided > 0 ? tier_op_distribution(buckets[0], family) : std::vector<double>{};

    // assemble the batch: guided samples first, then the uniform share
    std::vector<const ArchitectureRecord*> samples;
    samples.reserve(static_cast<std::size_t>(k));
    for (int g = 0; g < n_guided; ++g) {
      if (g % config.constraint_reuse == 0) {
        flops_state.bound = sample_bound(flops_state.choice, rng);
        params_state.bound = sample_bound(params_state.choice, rng);
      }
      const ArchitectureRecord* accepted = nullptr;
      for (int attempt = 0; attempt <= config.retry_cap; ++attempt) {
        ArchitectureRecord structure = family == Family::fixed4
                                           ? sample_cell_fixed4(op_dist, rng)
                                           : sample_cell_dag7(op_dist, rng, sample_nodes, sample_max_edges, family);
        const ArchitectureRecord* resolved = space.find_key(structure_key(structure));
        if (resolved == nullptr) continue;  // not materialized in this space: counts as a rejection
        accepted = resolved;
        if (resolved->total_flops <= flops_state.bound && resolved->total_params <= params_state.bound) break;
        // over the constraints: keep the last resolved sample only if the
        // retry budget runs out
      }
      if (accepted == nullptr) {
        accepted = &space.records[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(space.records.size())))];
      }
      samples.push_back(accepted);
    }
    for (int r = 0; r < n_random; ++r) {
      samples.push_back(&space.records[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(space.records.size())))]);
    }

    // classify and score the whole batch with frozen state
    std::vector<Prediction> preds(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) { preds[i] = classify(*samples[i]); });

    // top-k by score inside the best predicted tier, then lower tiers
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (preds[a].tier != preds[b].tier) return preds[a].tier < preds[b].tier;
      if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
      return samples[a]->id < samples[b]->id;
    });

    bool failed = false;
    for (int c = 0; c < config.top_k && c < static_cast<int>(order.size()); ++c) {
      const std::size_t idx = order[static_cast<std::size_t>(c)];
      CandidateResult cand;
      cand.id = samples[idx]->id;
      cand.tier = preds[idx].tier + 1;
      cand.score = preds[idx].score;
      auto cached = answered.find(cand.id);
      if (cached != answered.end()) {
        cand.accuracy = cached->second;
        ++iter.cached_hits;
      } else {
        const std::optional<double> acc = oracle(*samples[idx]);
        if (!acc) {
          iter.aborted = true;
          iter.abort_reason = "oracle failed for candidate " + cand.id;
          failed = true;
          break;
        }
        answered.emplace(cand.id, *acc);
        cand.accuracy = acc;
        ++iter.new_queries;
      }
      iter.candidates.push_back(std::move(cand));
    }

    if (!failed) {
      for (const CandidateResult& cand : iter.candidates) {
        if (cand.accuracy && (*cand.accuracy > report.best_accuracy || report.best_id.empty())) {
          report.best_accuracy = *cand.accuracy;
          report.best_id = cand.id;
        }
      }
      report.reported_queries += static_cast<long long>(iter.candidates.size());
      // embeddings follow predicted tiers during search; histograms and op
      // counts stay frozen
      std::vector<std::vector<const Tensor*>> by_tier(buckets.size());
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (preds[i].feature.data.empty()) continue;  // classifier overrides carry no features
        by_tier[static_cast<std::size_t>(preds[i].tier)].push_back(&preds[i].feature);
      }
      for (std::size_t t = 0; t < buckets.size(); ++t) update_tier_embedding(buckets[t], by_tier[t]);
    } else {
      iter.candidates.clear();
    }
    iter.best_id = report.best_id;
    iter.best_accuracy = report.best_accuracy;
    report.iterations.push_back(std::move(iter));
  }

  report.unique_queries = static_cast<long long>(answered.size());
  if (!report.best_id.empty() && space.rank_of_id.count(report.best_id) > 0) {
    report.best_rank = true_rank(space, report.best_id);
  }
  return report;
}

std::string report_to_jsonl(const SearchReport& report) {
  std::string out;
  for (const IterationReport& iter : report.iterations) {
    json j;
    j["iteration"] = iter.iteration;
    json cands = json::array();
    for (const CandidateResult& c : iter.candidates) {
      json jc;
      jc["id"] = c.id;
      jc["tier"] = c.tier;
      jc["score"] = c.score;
      if (c.accuracy) jc["accuracy"] = *c.accuracy;
      cands.push_back(std::move(jc));
    }
    j["candidates"] = std::move(cands);
    j["new_queries"] = iter.new_queries;
    j["cached_hits"] = iter.cached_hits;
    if (iter.aborted) j["aborted"] = iter.abort_reason;
    j["best_id"] = iter.best_id;
    j["best_accuracy"] = iter.best_accuracy;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string report_summary_json(const SearchReport& report) {
  json j;
  j["mode"] = search_mode_name(report.mode);
  j["seed"] = report.seed;
  j["iterations"] = report.iterations.size();
  j["queries"] = report.reported_queries;
  j["unique_queries"] = report.unique_queries;
  j["best_id"] = report.best_id;
  j["best_accuracy"] = report.best_accuracy;
  if (report.best_rank) {
    j["best_rank"] = report.best_rank->rank;
    j["best_rank_permille"] = report.best_rank->permille;
  }
  return j.dump(2) + "\n";
}

}  // namespace nar
