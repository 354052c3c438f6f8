#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace causalcde {

// Worker count: explicit request, else CAUSAL_CDE_THREADS, else hardware.
inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CAUSAL_CDE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(0..num_tasks-1) on a fixed-size worker pool. Task outputs must be
// written to pre-sized slots so results do not depend on scheduling order.
// The first exception is rethrown after all workers finish.
inline void run_parallel(int num_tasks, int threads,
                         const std::function<void(int)>& fn) {
  threads = std::min(resolve_thread_count(threads), num_tasks);
  if (threads <= 1) {
    for (int t = 0; t < num_tasks; ++t) fn(t);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const int task = next.fetch_add(1);
        if (task >= num_tasks) return;
        try {
          fn(task);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& worker : workers) worker.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace causalcde
