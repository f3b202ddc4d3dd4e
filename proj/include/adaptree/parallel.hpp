#pragma once

#include <cstddef>
#include <functional>

namespace adaptree {

// ADAPTREE_WORKERS if set (>= 1), else the hardware thread count
int default_workers();

// fn(begin, end) over contiguous chunks of [0, n); runs inline when workers <= 1
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t, std::size_t)>& fn);

// fn(i) for every i, handed out one at a time; suits jobs of uneven cost
void parallel_each(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace adaptree
