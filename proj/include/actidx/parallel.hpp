#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace actidx {

inline unsigned default_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n > 0 ? n : 1;
}

// Runs fn(i) for i in [0, n).  Work is handed out in small chunks from an
// atomic counter; callers write results into per-index slots so the output
// is identical regardless of thread count.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (threads == 0) threads = default_threads();
    if (threads <= 1 || n < 4) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::atomic<std::size_t> next{0};
    const std::size_t chunk = std::max<std::size_t>(1, n / (threads * 8));
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::atomic_flag error_claimed = ATOMIC_FLAG_INIT;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t begin = next.fetch_add(chunk);
                if (begin >= n || failed.load(std::memory_order_relaxed)) return;
                std::size_t end = std::min(n, begin + chunk);
                for (std::size_t i = begin; i < end; ++i) {
                    try {
                        fn(i);
                    } catch (...) {
                        if (!error_claimed.test_and_set()) error = std::current_exception();
                        failed.store(true, std::memory_order_relaxed);
                        return;
                    }
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace actidx
