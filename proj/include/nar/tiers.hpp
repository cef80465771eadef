#pragma once

#include <map>
#include <variant>
#include <vector>

#include "nar/encoding.hpp"
#include "nar/tensor.hpp"

namespace nar {

// One batch's empirical distribution of a scalar property. Bin kappa
// (1-based) covers (lo + (kappa-1)*step, lo + kappa*step]; the first bin also
// includes lo itself so the minimum is not orphaned. Masses are counts
// divided by the batch size, so they sum to member_count / batch_size.
struct BatchHistogram {
  double lo = 0.0;           // smallest observed value
  double hi = 0.0;           // largest observed value
  long long step = 1;        // integer bin width, ceil of the raw step, floor 1
  int batch_size = 0;
  long long member_count = 0;
  std::vector<double> masses;

  int bins() const { return static_cast<int>(masses.size()); }
  double bin_upper_edge(int kappa) const { return lo + static_cast<double>(step) * kappa; }
  // right edge of the binned coverage; >= hi when the rounded step overshoots
  double coverage_hi() const { return bin_upper_edge(bins()); }
  double mass_sum() const;
};

BatchHistogram build_histogram(const std::vector<double>& values, int batch_size, int bins);

// KL(p || q) in nats. Both histograms are re-binned by proportional overlap
// onto the union interval with the finer step of the two, renormalized to
// probabilities, smoothed with 1e-8 per bin, and renormalized again.
double kl_divergence(const BatchHistogram& p, const BatchHistogram& q);

struct TierBucket {
  int tier = 0;               // 0-based; tier 0 is the top-quality tier
  Tensor embedding;           // N x D running mean of assigned features
  long long feature_count = 0;
  std::vector<BatchHistogram> flops_histograms;   // one per training iteration
  std::vector<BatchHistogram> params_histograms;
  std::map<int, long long> op_counts;
};

// Running-mean update: e <- (e * count + sum(features)) / (count + n).
// An empty feature list is a no-op.
void update_tier_embedding(TierBucket& bucket, const std::vector<const Tensor*>& features);

void update_op_counts(TierBucket& bucket, const std::vector<int>& codes, Family family);

struct FullDistribution {
  BatchHistogram histogram;
};
struct IntervalOnly {
  double lo = 0.0;
  double hi = 0.0;
};
using DistributionChoice = std::variant<FullDistribution, IntervalOnly>;

struct SelectionPolicy {
  double kl_threshold = 2.5;     // nats
  double min_count_factor = 0.1; // top tier must hold at least factor * batch_size members
  int compare_from_tier = 4;     // 1-based index of the first lower tier compared against
};

// Decides whether the top tier's full histogram is distinctive enough to
// sample from, or only its value interval should be kept. tier_histograms[0]
// is the top tier; entries may be null (missing), which forces the interval
// fallback when compared.
DistributionChoice select_distribution(const std::vector<const BatchHistogram*>& tier_histograms,
                                       int batch_size, const SelectionPolicy& policy);

}  // namespace nar
