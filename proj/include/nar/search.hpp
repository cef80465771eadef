#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nar/bench_data.hpp"
#include "nar/model.hpp"
#include "nar/rng.hpp"
#include "nar/tiers.hpp"

namespace nar {

enum class SearchMode { random, statistics, interval };

std::string search_mode_name(SearchMode m);
SearchMode search_mode_from_name(const std::string& name);

struct SearchConfig {
  int iterations = 50;
  int sample_size = 64;          // matches the training batch size
  double random_fraction = 0.5;  // share of each batch drawn uniformly
  int constraint_reuse = 25;     // samples per constraint draw
  int top_k = 5;
  SelectionPolicy selection;
  SearchMode mode = SearchMode::statistics;
  std::uint64_t seed = 1;
  int retry_cap = 20;  // rejection retries before a sample is accepted as-is

  void validate() const;
};

// Draws a constraint upper bound from the selected distribution: a bin by
// mass (bound = bin's upper edge), or uniform on the kept interval.
double sample_bound(const DistributionChoice& choice, Rng& rng);

// Normalized op-type distribution of a bucket with add-one smoothing, over
// the family's sampleable codes (2..4 for dag7/synth, 0..4 for fixed4).
std::vector<double> tier_op_distribution(const TierBucket& bucket, Family family);

// Structure-only cell sampler for dag7-style spaces: every node picks one
// earlier node as predecessor and an op from op_dist, then the remaining
// edge budget is spent on random deduplicated low->high pairs.
ArchitectureRecord sample_cell_dag7(const std::vector<double>& op_dist, Rng& rng, int nodes = 7,
                                    int max_edges = 9, Family family = Family::dag7);

// Fixed complete connectivity, one op per edge drawn independently.
ArchitectureRecord sample_cell_fixed4(const std::vector<double>& op_dist, Rng& rng);

struct CandidateResult {
  std::string id;
  int tier = 0;  // 1-based predicted tier
  double score = 0.0;
  std::optional<double> accuracy;
};

struct IterationReport {
  int iteration = 0;
  std::vector<CandidateResult> candidates;
  int new_queries = 0;
  int cached_hits = 0;
  bool aborted = false;
  std::string abort_reason;
  std::string best_id;
  double best_accuracy = 0.0;
};

struct SearchReport {
  std::vector<IterationReport> iterations;
  long long reported_queries = 0;  // candidates across iterations; the paper's accounting
  long long unique_queries = 0;    // distinct ids actually answered by the oracle
  std::string best_id;
  double best_accuracy = 0.0;
  std::optional<RankInfo> best_rank;
  SearchMode mode = SearchMode::statistics;
  std::uint64_t seed = 0;
};

using Oracle = std::function<std::optional<double>(const ArchitectureRecord&)>;
using Classifier = std::function<Prediction(const ArchitectureRecord&)>;

// The training-free search loop: constraint-guided plus uniform sampling,
// NAR classification and scoring, top-k-by-score selection from the best
// predicted tier, oracle queries, and predicted-tier embedding updates.
// `oracle` defaults to the records' own accuracy; `classifier` can replace
// the NAR (upper-bound harnesses).
SearchReport search(const NarModel& model, std::vector<TierBucket> buckets, const RecordSpace& space,
                    const SearchConfig& config, const Oracle& oracle = {}, const Classifier& classifier = {});

// Line-delimited per-iteration JSON plus a one-object summary.
std::string report_to_jsonl(const SearchReport& report);
std::string report_summary_json(const SearchReport& report);

}  // namespace nar
