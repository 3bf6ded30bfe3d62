#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace bcpnn {

namespace detail {
inline std::atomic<int>& thread_setting() {
    static std::atomic<int> n{0};
    return n;
}
}  // namespace detail

/// Caps the worker count used by batched kernels. 0 means hardware concurrency.
inline void set_thread_count(int n) { detail::thread_setting().store(std::max(0, n)); }

inline int thread_count() {
    const int n = detail::thread_setting().load();
    if (n > 0) return n;
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls f(i) for i in [0, n), splitting the range into contiguous chunks across threads.
/// Iterations must touch disjoint state; results are then independent of the thread count.
template <typename F>
void parallel_for(int n, F&& f) {
    const int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const int begin = n * w / workers;
        const int end = n * (w + 1) / workers;
        pool.emplace_back([&, w, begin, end] {
            try {
                for (int i = begin; i < end; ++i) f(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace bcpnn
