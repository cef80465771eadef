#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace nar {

// Seeded generator with hand-rolled distributions. std::uniform_*_distribution
// output is implementation-defined, which would break byte-identical reports
// across standard libraries; these draws are fully pinned by mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // in [0, n), unbiased
  int uniform_int(int n);

  // index drawn by weight; weights need not be normalized
  int categorical(const std::vector<double>& weights);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent child stream, for per-record or per-repeat use
  Rng fork(std::uint64_t salt) {
    return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x52c1b3ed9d351db5ULL));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nar
