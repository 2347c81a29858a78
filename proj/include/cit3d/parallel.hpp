#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace cit3d {

/// Worker budget: 1 when `deterministic`, otherwise hardware concurrency capped by CIT3D_THREADS.
int worker_count(bool deterministic);

/// Splits [begin, end) into `workers` contiguous chunks and runs fn(worker, lo, hi) on each.
///
/// Chunk boundaries depend only on the range and worker count, so per-worker partial results
/// reduced in worker order are reproducible.
template <class Fn>
void parallel_for(int begin, int end, int workers, Fn&& fn) {
    const int n = end - begin;
    if (n <= 0) return;
    workers = std::clamp(workers, 1, n);
    if (workers == 1) {
        fn(0, begin, end);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    const auto chunk = [&](int w) { return begin + static_cast<int>((static_cast<long long>(n) * w) / workers); };
    for (int w = 1; w < workers; ++w) {
        pool.emplace_back([&fn, &chunk, w] { fn(w, chunk(w), chunk(w + 1)); });
    }
    fn(0, chunk(0), chunk(1));
}

} // namespace cit3d
