#pragma once

#include <cstddef>
#include <functional>

namespace capstraffic {

// Worker cap: CAPSTRAFFIC_THREADS when set to a positive integer, otherwise
// the hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are fixed by
// n and the worker count, so per-index results are independent of
// scheduling. Exceptions from workers are rethrown in the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace capstraffic
