#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace meshforge {

namespace detail {
inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{0};
    return cap;
}
}  // namespace detail

/// Caps the number of workers used by `parallel_for`. Zero means "use the
/// MESHFORGE_THREADS environment variable, else hardware concurrency".
inline void set_max_threads(int n) { detail::thread_cap().store(std::max(0, n)); }

inline int max_threads() {
    int cap = detail::thread_cap().load();
    if (cap > 0) return cap;
    if (const char* env = std::getenv("MESHFORGE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `fn(begin, end)` over contiguous chunks of [0, n). Each index is
/// handled by exactly one chunk, so writes to per-index outputs are
/// deterministic regardless of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1024) {
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(max_threads()),
                              std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
    if (workers <= 1) {
        fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace meshforge
