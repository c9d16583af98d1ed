#pragma once

#include <cstddef>
#include <functional>

namespace coseg {

/// Worker count: SNDM_THREADS if set to a positive integer, else the number
/// of hardware threads (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Indices are handed
/// out dynamically; fn must only touch state owned by index i. The first
/// exception thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace coseg
