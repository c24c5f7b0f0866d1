#pragma once

#include <cstddef>
#include <functional>

namespace rlab {

// Worker count: RESIDUAL_LAB_THREADS when set to a positive integer, otherwise
// the machine's hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, count) on up to worker_count() threads. Each index is
// executed exactly once; callers write results into per-index slots and reduce
// in index order so output does not depend on scheduling. The first exception
// thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

} // namespace rlab
