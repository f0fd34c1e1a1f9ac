#pragma once

#include <cstddef>
#include <functional>

namespace ldct {

/// Runs fn(0..n-1), fanning out across up to `threads` workers when
/// threads > 1. Indices are statically partitioned, so outputs written to
/// per-index locations are identical for any thread count.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace ldct
