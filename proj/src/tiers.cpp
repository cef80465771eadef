#include "nar/tiers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nar {

namespace {

constexpr double kSmoothing = 1e-8;

// Proportional-overlap re-binning of `h` onto the grid starting at `lo` with
// `step` width and `bins` bins, normalized to a probability vector.
std::vector<double> rebin_normalized(const BatchHistogram& h, double lo, double step, int bins) {
  std::vector<double> out(static_cast<std::size_t>(bins), 0.0);
  const double total = h.mass_sum();
  if (total <= 0.0) return out;
  for (int k = 0; k < h.bins(); ++k) {
    const double mass = h.masses[static_cast<std::size_t>(k)];
    if (mass == 0.0) continue;
    const double s0 = h.lo + static_cast<double>(h.step) * k;
    const double s1 = h.lo + static_cast<double>(h.step) * (k + 1);
    if (s1 <= s0) continue;
    for (int t = 0; t < bins; ++t) {
      const double t0 = lo + step * t;
      const double t1 = lo + step * (t + 1);
      const double overlap = std::min(s1, t1) - std::max(s0, t0);
      if (overlap > 0.0) out[static_cast<std::size_t>(t)] += mass * overlap / (s1 - s0);
    }
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> smooth_normalized(std::vector<double> p) {
  double total = 0.0;
  for (double& v : p) {
    v += kSmoothing;
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

double BatchHistogram::mass_sum() const {
  double s = 0.0;
  for (double m : masses) s += m;
  return s;
}

BatchHistogram build_histogram(const std::vector<double>& values, int batch_size, int bins) {
  if (values.empty()) throw std::invalid_argument("build_histogram needs at least one value");
  if (batch_size < static_cast<int>(values.size())) {
    throw std::invalid_argument("build_histogram batch size smaller than the value count");
  }
  if (bins < 1) throw std::invalid_argument("build_histogram needs at least one bin");

  BatchHistogram h;
  h.batch_size = batch_size;
  h.member_count = static_cast<long long>(values.size());
  h.lo = *std::min_element(values.begin(), values.end());
  h.hi = *std::max_element(values.begin(), values.end());

  if (h.hi == h.lo) {
    h.step = 1;
    h.masses.assign(1, static_cast<double>(values.size()) / batch_size);
    return h;
  }

  h.step = std::max<long long>(1, static_cast<long long>(std::ceil((h.hi - h.lo) / bins)));
  const int used = static_cast<int>(std::ceil((h.hi - h.lo) / static_cast<double>(h.step)));
  std::vector<long long> counts(static_cast<std::size_t>(std::max(1, used)), 0);
  for (double v : values) {
    int kappa;
    if (v <= h.lo) {
      kappa = 1;  // closed lower edge of the first bin
    } else {
      kappa = static_cast<int>(std::ceil((v - h.lo) / static_cast<double>(h.step)));
      kappa = std::clamp(kappa, 1, static_cast<int>(counts.size()));
    }
    counts[static_cast<std::size_t>(kappa - 1)] += 1;
  }
  h.masses.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    h.masses[i] = static_cast<double>(counts[i]) / batch_size;
  }
  return h;
}

double kl_divergence(const BatchHistogram& p, const BatchHistogram& q) {
  if (p.member_count <= 0 || q.member_count <= 0) {
    throw std::invalid_argument("kl_divergence needs nonempty histograms");
  }
  const double lo = std::min(p.lo, q.lo);
  const double hi = std::max(p.coverage_hi(), q.coverage_hi());
  const double step = static_cast<double>(std::min(p.step, q.step));
  const int bins = std::max(1, static_cast<int>(std::ceil((hi - lo) / step)));

  const std::vector<double> pp = smooth_normalized(rebin_normalized(p, lo, step, bins));
  const std::vector<double> qq = smooth_normalized(rebin_normalized(q, lo, step, bins));
  double d = 0.0;
  for (int i = 0; i < bins; ++i) {
    const double pi = pp[static_cast<std::size_t>(i)];
    const double qi = qq[static_cast<std::size_t>(i)];
    d += pi * std::log(pi / qi);
  }
  return d;
}

void update_tier_embedding(TierBucket& bucket, const std::vector<const Tensor*>& features) {
  if (features.empty()) return;
  for (const Tensor* f : features) {
    if (!f->same_shape(bucket.embedding)) {
      throw std::invalid_argument("tier feature shape " + shape_str(*f) + " does not match embedding " +
                                  shape_str(bucket.embedding));
    }
  }
  const double prior = static_cast<double>(bucket.feature_count);
  const double next = prior + static_cast<double>(features.size());
  for (std::size_t i = 0; i < bucket.embedding.data.size(); ++i) {
    double sum = bucket.embedding.data[i] * prior;
    for (const Tensor* f : features) sum += f->data[i];
    bucket.embedding.data[i] = sum / next;
  }
  bucket.feature_count += static_cast<long long>(features.size());
}

void update_op_counts(TierBucket& bucket, const std::vector<int>& codes, Family family) {
  const int lo = family == Family::fixed4 ? 0 : 1;
  const int hi = family == Family::fixed4 ? 4 : 5;
  for (int code : codes) {
    if (code < lo || code > hi) {
      throw std::invalid_argument("op code " + std::to_string(code) + " invalid for family " + family_name(family));
    }
  }
  for (int code : codes) bucket.op_counts[code] += 1;
}

DistributionChoice select_distribution(const std::vector<const BatchHistogram*>& tier_histograms,
                                       int batch_size, const SelectionPolicy& policy) {
  if (tier_histograms.empty() || tier_histograms[0] == nullptr) {
    throw std::invalid_argument("select_distribution needs the top tier's histogram");
  }
  if (policy.compare_from_tier <= 1) throw std::invalid_argument("compare_from_tier must exceed 1");
  const BatchHistogram& top = *tier_histograms[0];
  const IntervalOnly interval{top.lo, top.hi};

  const int tiers = static_cast<int>(tier_histograms.size());
  for (int i = policy.compare_from_tier; i <= tiers; ++i) {
    const BatchHistogram* other = tier_histograms[static_cast<std::size_t>(i - 1)];
    if (static_cast<double>(top.member_count) < policy.min_count_factor * batch_size) return interval;
    if (other == nullptr) return interval;  // nothing to compare against: keep only the interval
    if (kl_divergence(top, *other) < policy.kl_threshold) return interval;
  }
  return FullDistribution{top};
}

}  // namespace nar
