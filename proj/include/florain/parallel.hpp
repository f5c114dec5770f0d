#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace florain {

namespace detail {
inline std::atomic<unsigned> g_thread_count{1};
}

/// Worker count used by the reductions below. 0 selects hardware concurrency.
inline void set_thread_count(unsigned n) {
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  detail::g_thread_count.store(n);
}

inline unsigned thread_count() { return detail::g_thread_count.load(); }

/// Records are reduced in fixed-size blocks; the partition never depends on
/// the worker count, so results are bit-identical for any thread setting.
inline constexpr std::size_t kReductionBlock = 64;

/// Calls fn(block_index, begin, end) for each block of [0, n). Blocks run
/// concurrently; the caller owns per-block output slots and combines them in
/// block order afterwards.
template <class Fn>
void for_each_block(std::size_t n, Fn&& fn) {
  const std::size_t blocks = (n + kReductionBlock - 1) / kReductionBlock;
  auto run = [&](std::size_t b) {
    const std::size_t begin = b * kReductionBlock;
    fn(b, begin, std::min(n, begin + kReductionBlock));
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), blocks));
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) run(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t b = next++; b < blocks; b = next++) {
        try {
          run(b);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

inline std::size_t block_count(std::size_t n) {
  return (n + kReductionBlock - 1) / kReductionBlock;
}

}  // namespace florain
