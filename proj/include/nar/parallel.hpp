#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace nar {

// Worker count from NAR_THREADS; 1 (serial) when unset or invalid.
int configured_threads();

// Runs f(i) for i in [0, n). Work is split into contiguous chunks; callers
// write results by index, so the output is identical at any thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const int threads = configured_threads();
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&f, begin, end] {
      for (std::size_t i = begin; i < end; ++i) f(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace nar
