#pragma once

#include <cstddef>
#include <functional>

namespace sgt {

// Number of worker threads for per-point loops: SGT_THREADS if set, else the
// hardware thread count. Determinism requires that workers only write to
// disjoint slots and that all reductions happen serially afterwards.
int worker_count();

// Runs fn(k) for k in [0, total) on worker_count() threads over contiguous
// chunks. If any call throws, the exception from the lowest k is rethrown
// after all workers finish, so failure reporting is deterministic.
void run_indexed(std::size_t total, const std::function<void(std::size_t)>& fn);

} // namespace sgt
