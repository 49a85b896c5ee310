#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace celmnav {

/// Number of worker threads used by parallel_for; 0 means hardware concurrency.
std::size_t parallelism();
void set_parallelism(std::size_t threads);

/// Runs body(chunk, begin, end) over a static contiguous partition of [0, n).
/// The partition depends only on n and the thread count, so reductions that
/// combine per-chunk partials in chunk order are deterministic.
template <typename Body>
void parallel_chunks(std::size_t n, Body&& body) {
  const std::size_t threads = std::max<std::size_t>(1, std::min(parallelism(), n));
  if (threads <= 1) {
    if (n > 0) body(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const std::size_t step = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * step;
    const std::size_t end = std::min(n, begin + step);
    if (begin >= end) break;
    pool.emplace_back([&, t, begin, end] {
      try {
        body(t, begin, end);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::size_t chunk_count(std::size_t n) {
  return std::max<std::size_t>(1, std::min(parallelism(), n));
}

template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  parallel_chunks(n, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) body(i);
  });
}

}  // namespace celmnav
