#pragma once

#include <cstddef>
#include <functional>

namespace cellgraph {

/// Number of worker threads used by parallel_for. 0 means hardware concurrency.
void set_num_threads(unsigned n);
unsigned num_threads();

/// Runs body(i) for i in [0, n). Work is split into contiguous blocks; each
/// index is processed exactly once and callers write results into per-index
/// slots, so the output does not depend on the thread count. Nested calls run
/// serially on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace cellgraph
