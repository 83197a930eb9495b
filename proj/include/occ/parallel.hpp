#pragma once

#include <cstddef>
#include <functional>

namespace occ {

// Worker count used by parallel kernels. Defaults to OCC_FORGE_THREADS when
// set, otherwise std::thread::hardware_concurrency().
std::size_t thread_count();

// Overrides the worker count for the current process; 0 restores the default.
void set_thread_count(std::size_t n);

// Splits [begin, end) into contiguous chunks and runs body(lo, hi) on each.
// Chunk boundaries depend only on the range and the worker count, and every
// kernel in this library writes each output element from exactly one chunk,
// so results do not depend on scheduling.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_grain = 1);

}  // namespace occ
