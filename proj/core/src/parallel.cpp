#include "radiomap/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace radiomap {

namespace {
std::atomic<int> g_max_threads{0}; // 0 = use hardware concurrency
}

void set_max_threads(int threads) { g_max_threads.store(threads > 0 ? threads : 1); }

int max_threads() {
    int t = g_max_threads.load();
    if (t <= 0) {
        unsigned hw = std::thread::hardware_concurrency();
        t = hw > 0 ? static_cast<int>(hw) : 1;
    }
    return t;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int threads = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
    if (threads <= 1) {
        fn(0, n);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

void parallel_for_each(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    parallel_for(n, [&fn](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
    });
}

} // namespace radiomap
