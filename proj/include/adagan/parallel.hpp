#pragma once

// Deterministic data parallelism: [0, n) is split into contiguous chunks,
// one per worker, so results depend only on the kernel, never on timing.
// Output is bit-identical for a fixed thread count (and, because chunks
// never share accumulators in this codebase, across thread counts too).

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace adagan {

inline int default_thread_count() {
  if (const char* env = std::getenv("ADAGAN_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

inline std::atomic<int>& thread_count_ref() {
  static std::atomic<int> count{default_thread_count()};
  return count;
}

inline int thread_count() { return thread_count_ref().load(); }
inline void set_thread_count(int n) { thread_count_ref().store(n < 1 ? 1 : n); }

// body(begin, end) runs on disjoint ranges covering [0, n).
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  const int workers = std::min<int64_t>(thread_count(), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers) - 1);
  for (int w = 1; w < workers; ++w) {
    int64_t begin = n * w / workers;
    int64_t end = n * (w + 1) / workers;
    threads.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, n / workers);
  for (auto& t : threads) t.join();
}

}  // namespace adagan
