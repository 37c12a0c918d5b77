#pragma once

#include <cstddef>
#include <functional>

namespace retseg {

// Worker count for per-sample data work: RETSEG_NUM_WORKERS if set, else the
// hardware concurrency. Always at least 1.
int data_workers();

// Calls fn(i) for i in [0, n) on up to `workers` threads. Each index is
// handled exactly once; callers write results into pre-sized slots, so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace retseg
