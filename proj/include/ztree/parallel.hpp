#pragma once

#include <algorithm>
#include <thread>
#include <vector>

#include "ztree/common.hpp"

namespace ztree {

/// Worker cap: ZTREE_THREADS if set, else hardware concurrency.
int worker_count();

/// Overrides the worker cap for this process (0 restores the default).
void set_worker_count(int n);

/// Static-chunked parallel loop over [0, n). `fn(i)` must not write shared state
/// outside of index i's slot.
template <class Fn>
void parallel_for(Index n, Fn&& fn, Index min_chunk = 64) {
  const int workers =
      static_cast<int>(std::min<Index>(worker_count(), std::max<Index>(1, n / min_chunk)));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  // interleaved blocks balance uneven per-item cost
  const Index block = std::max<Index>(1, std::min<Index>(min_chunk, n / (workers * 8) + 1));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (Index start = w * block; start < n; start += block * workers) {
        const Index stop = std::min(n, start + block);
        for (Index i = start; i < stop; ++i) fn(i);
      }
    });
  }
}

}  // namespace ztree
