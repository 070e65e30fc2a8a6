#pragma once

#include <cstddef>
#include <functional>

namespace kaps {

// Worker count: KAPS_THREADS when set to a positive integer, otherwise the
// hardware concurrency.
std::size_t thread_count();

// Calls body(i) for every i in [0, n). Indices are handed out dynamically;
// callers write results by index so the outcome never depends on scheduling.
// Nested calls from inside a worker run inline on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace kaps
