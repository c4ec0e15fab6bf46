#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace skipnet {

namespace detail {
inline std::atomic<std::size_t>& thread_count_ref() {
  static std::atomic<std::size_t> count{1};
  return count;
}
}  // namespace detail

// Process-wide worker count for batch-parallel kernels.
inline void set_num_threads(std::size_t n) {
  detail::thread_count_ref() = n == 0 ? 1 : n;
}

inline std::size_t num_threads() {
  return detail::thread_count_ref().load();
}

// Runs body over contiguous chunks of [0, n). Each index is processed by
// exactly one worker and cross-chunk reductions are the caller's job, so a
// kernel built on this is bitwise identical for every thread count.
inline void parallel_for(
    std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    if (n > 0) body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto run = [&](std::size_t begin, std::size_t end) {
    try {
      body(begin, end);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin < end) pool.emplace_back(run, begin, end);
  }
  run(0, std::min(chunk, n));
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace skipnet
