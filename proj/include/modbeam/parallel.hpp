#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace modbeam {

/// Process-wide worker cap. 0 means use std::thread::hardware_concurrency().
inline unsigned& max_threads_ref() {
  static unsigned value = 0;
  return value;
}

inline void set_max_threads(unsigned n) { max_threads_ref() = n; }

inline unsigned effective_threads(std::size_t n_items) {
  unsigned hw = max_threads_ref();
  if (hw == 0) hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (n_items < hw) hw = static_cast<unsigned>(n_items);
  return hw == 0 ? 1u : hw;
}

/// Runs fn(i) for i in [0, n). Work items must write only to their own
/// per-index slots; callers reduce the slots sequentially afterwards so
/// results do not depend on the number of workers.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const unsigned workers = effective_threads(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) break;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          break;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load() && error) std::rethrow_exception(error);
}

}  // namespace modbeam
