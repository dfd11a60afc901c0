#pragma once

#include <functional>

namespace hwflow {

// Static contiguous split of [begin, end) over `threads` workers.
// Results must not depend on the split: callers only write to
// per-index slots, all reductions happen serially afterwards. This is
// what keeps outputs bit-identical across thread counts.
void parallel_for(int begin, int end, int threads,
                  const std::function<void(int)>& fn);

}  // namespace hwflow
