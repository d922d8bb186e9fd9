#pragma once

#include <cstdint>
#include <functional>

namespace radiomap {

// Caps the number of worker threads used by parallel_for. 1 disables
// threading. Results are bit-identical for every thread count: work items
// write disjoint outputs and each item's internal order is fixed.
void set_max_threads(int threads);
int max_threads();

// Runs fn(begin, end) over a partition of [0, n). Chunk boundaries depend on
// the thread cap, so fn must produce outputs that do not depend on the
// partition (one writer per output element).
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

// Convenience wrapper: fn(i) per index.
void parallel_for_each(std::int64_t n, const std::function<void(std::int64_t)>& fn);

} // namespace radiomap
