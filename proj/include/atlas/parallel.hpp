#pragma once

#include <cstddef>
#include <functional>

namespace atlas {

// Process-wide cap on worker threads (the CLI's --threads). 0 means
// hardware concurrency.
void set_thread_limit(unsigned n);
unsigned thread_limit();

// Runs fn(i) for i in [begin, end) over contiguous chunks. Each index is
// visited exactly once; callers write to per-index slots so results do not
// depend on scheduling.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn);

}  // namespace atlas
