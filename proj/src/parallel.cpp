#include "hwflow/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace hwflow {

void parallel_for(int begin, int end, int threads,
                  const std::function<void(int)>& fn) {
  const int n = end - begin;
  if (n <= 0) return;
  threads = std::max(1, threads);
  if (threads == 1 || n < 2 * threads) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  const int chunk = (n + threads - 1) / threads;
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    const int lo = begin + w * chunk;
    const int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace hwflow
