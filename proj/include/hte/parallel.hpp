#pragma once

#include <cstddef>
#include <functional>

namespace hte {

// Runs body(i) for i in [0, count) on up to `workers` threads. Results must be
// written to per-index slots by the caller; scheduling never affects them.
// The exception of the lowest failing index is rethrown after all threads join.
void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t)>& body);

// Hardware concurrency, at least 1.
int default_workers();

}  // namespace hte
