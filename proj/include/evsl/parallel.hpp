#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace evsl {

/// Number of workers to use for `requested` (0 = hardware concurrency).
inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs body(begin, end, chunk) over contiguous chunks of [0, n). Chunk boundaries depend only
/// on n and `chunks`, so callers merging per-chunk results in chunk order are deterministic
/// regardless of the worker count.
template <typename Body>
void parallel_chunks(std::size_t n, std::size_t chunks, int workers, Body&& body) {
  if (n == 0) return;
  chunks = std::max<std::size_t>(1, std::min(chunks, n));
  const std::size_t per = (n + chunks - 1) / chunks;
  chunks = (n + per - 1) / per;
  workers = std::max(1, std::min<int>(resolve_workers(workers), static_cast<int>(chunks)));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c * per, std::min(n, (c + 1) * per), c);
    return;
  }
  std::exception_ptr failure;
  std::mutex lock;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t c;
      {
        std::lock_guard<std::mutex> guard(lock);
        if (next >= chunks || failure) return;
        c = next++;
      }
      try {
        body(c * per, std::min(n, (c + 1) * per), c);
      } catch (...) {
        std::lock_guard<std::mutex> guard(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace evsl
