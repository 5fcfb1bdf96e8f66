// Chunked parallel-for with a fixed work decomposition.
//
// Work is split into a chunk count chosen by the caller, not by the thread
// count, and any reduction across chunks is performed by the caller in chunk
// order. Numeric results are therefore identical for any --threads value.
#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hsnerf {

inline void parallel_for_chunks(int n_chunks, int n_threads,
                                const std::function<void(int)>& body) {
  if (n_chunks <= 0) return;
  if (n_threads <= 1 || n_chunks == 1) {
    for (int i = 0; i < n_chunks; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n_chunks) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_chunks, std::memory_order_relaxed);
        return;
      }
    }
  };
  int workers = std::min(n_threads, n_chunks);
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers) - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Splits [0, n) into roughly equal contiguous ranges.
struct ChunkRange {
  int begin = 0;
  int end = 0;
};

inline ChunkRange chunk_range(int n, int n_chunks, int chunk) {
  int base = n / n_chunks, rem = n % n_chunks;
  int begin = chunk * base + std::min(chunk, rem);
  return {begin, begin + base + (chunk < rem ? 1 : 0)};
}

}  // namespace hsnerf
