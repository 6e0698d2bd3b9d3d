#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace dforest {

// Splits [0, n) into `threads` contiguous chunks and runs fn(chunk, begin, end)
// on each. Chunk boundaries depend only on (n, threads), so per-chunk results
// reduced in chunk order are reproducible for a fixed thread count.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  const std::size_t per = (n + threads - 1) / threads;
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t begin = std::min(n, t * per), end = std::min(n, begin + per);
    pool.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
  }
  fn(std::size_t{0}, std::size_t{0}, std::min(n, per));
}

}  // namespace dforest
