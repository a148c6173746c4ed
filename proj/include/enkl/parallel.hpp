#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace enkl {

// Worker count for parallel maps (forward_ensemble members, per-sample
// update matrices). 1 = sequential, 0 = hardware concurrency. Results are
// written to disjoint slots and reduced in fixed index order, so the thread
// count never changes numerical output.
namespace detail {
inline std::atomic<int> thread_count{1};
}

inline void set_threads(int n) {
  detail::thread_count.store(n < 0 ? 0 : n);
}

inline int threads() {
  int n = detail::thread_count.load();
  if (n == 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
  }
  return n;
}

// Runs fn(0..n-1), splitting the index range across the configured workers.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t)>& fn) {
  const int workers = threads();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int spawn = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(workers), n));
  pool.reserve(static_cast<std::size_t>(spawn) - 1);
  for (int t = 1; t < spawn; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
}

}  // namespace enkl
