#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace advknn {

/// Process-wide default worker count (the CLI sets this from --workers).
int default_workers();
void set_default_workers(int n);

/// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. Results must be written to disjoint, preallocated slots so the
/// outcome is identical for any worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  int workers = 0);

} // namespace advknn
