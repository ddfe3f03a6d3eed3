#pragma once

#include <cstdint>
#include <functional>

namespace mmflow {

// Worker count from MMFLOW_THREADS (default 1). Read once and cached.
int thread_cap();

// Runs body over contiguous disjoint chunks of [0, n). Each index is touched
// by exactly one worker, so results are identical for any thread count as
// long as the body writes only to its own indices.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

}  // namespace mmflow
