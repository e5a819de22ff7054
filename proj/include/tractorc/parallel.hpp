#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

#include "tractorc/geometry.hpp"

namespace tractorc::detail {

// Splits [0, n) into contiguous blocks, one per worker. fn(begin, end) must
// only write to outputs owned by its block.
template <typename Fn>
void parallel_blocks(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace tractorc::detail
