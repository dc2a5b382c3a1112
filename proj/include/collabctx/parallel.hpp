#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace collabctx {

// Worker cap: CC_THREADS if set and positive, else hardware concurrency.
int worker_threads();

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks write disjoint
// outputs, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 64) {
  const auto workers = static_cast<std::size_t>(worker_threads());
  const std::size_t chunks = std::min(workers, (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (chunks <= 1) {
    if (n) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  const std::size_t step = (n + chunks - 1) / chunks;
  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t begin = c * step, end = std::min(n, begin + step);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace collabctx
