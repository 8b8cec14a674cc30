#pragma once

#include <cstddef>
#include <functional>

namespace infusion {

// Worker count from INFUSION_WORKERS, falling back to hardware concurrency.
std::size_t worker_count();

// Runs body(i) for i in [0, n) on up to worker_count() threads. Results must
// be written to index-addressed slots so the outcome is schedule independent.
// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace infusion
