#pragma once

#include <cstddef>
#include <functional>

namespace grafuse {

/// Worker cap: GRAFUSE_THREADS if set and positive, else hardware concurrency.
std::size_t worker_threads();

/// Runs body(begin, end) over disjoint contiguous chunks of [0, n). Each index is
/// touched by exactly one chunk, so any per-index computation is deterministic
/// regardless of the thread count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace grafuse
