#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace spherecnf {

/// Runs body(worker_id, block) for block = 0..num_blocks-1 on up to
/// num_threads workers. Blocks are claimed from an atomic counter, so the
/// assignment of blocks to workers is scheduling-dependent; callers that need
/// deterministic reductions must key their accumulators by block, not worker.
/// The first exception thrown by any worker is rethrown on the caller.
inline void parallel_for_blocks(
    int num_blocks, int num_threads,
    const std::function<void(int worker_id, int block)>& body) {
  if (num_blocks <= 0) return;
  num_threads = std::max(1, std::min(num_threads, num_blocks));
  if (num_threads == 1) {
    for (int b = 0; b < num_blocks; ++b) body(0, b);
    return;
  }

  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&](int id) {
    try {
      for (int b = next.fetch_add(1); b < num_blocks; b = next.fetch_add(1))
        body(id, b);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
      next.store(num_blocks);  // drain remaining work
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(num_threads - 1);
  for (int id = 1; id < num_threads; ++id) threads.emplace_back(worker, id);
  worker(0);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace spherecnf
