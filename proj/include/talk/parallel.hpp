#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace talk {

// Runs fn(begin..end) split into contiguous chunks across up to `workers`
// threads. Each index is processed by exactly one thread, so any per-index
// reduction keeps a fixed summation order and results are independent of
// the worker count.
template <class Fn>
void parallel_for(std::int64_t begin, std::int64_t end, int workers, Fn&& fn) {
    const std::int64_t count = end - begin;
    if (count <= 0) return;
    if (workers <= 1 || count == 1) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    const int threads = static_cast<int>(std::min<std::int64_t>(workers, count));
    const std::int64_t chunk = (count + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads) - 1);
    for (int t = 1; t < threads; ++t) {
        const std::int64_t lo = begin + chunk * t;
        const std::int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    const std::int64_t hi0 = std::min(end, begin + chunk);
    for (std::int64_t i = begin; i < hi0; ++i) fn(i);
    for (auto& th : pool) th.join();
}

inline int default_workers() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace talk
