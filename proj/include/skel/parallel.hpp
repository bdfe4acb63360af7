#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace skel::par {

namespace detail {
inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{0};  // 0 = not yet resolved
    return cap;
}
}  // namespace detail

// Worker cap. Resolved once from NM_THREADS (falling back to hardware
// parallelism) unless set explicitly.
inline void set_thread_count(int n) { detail::thread_cap().store(n < 1 ? 1 : n); }

inline int thread_count() {
    int n = detail::thread_cap().load();
    if (n > 0) return n;
    if (const char* env = std::getenv("NM_THREADS")) {
        const int parsed = std::atoi(env);
        if (parsed >= 1) {
            set_thread_count(parsed);
            return parsed;
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    n = hw == 0 ? 1 : static_cast<int>(hw);
    set_thread_count(n);
    return n;
}

// Runs fn(i) for i in [0, n). Each index is processed exactly once and
// writes only to its own output slots, so results do not depend on the
// schedule; any cross-index reduction must happen afterwards in index order.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace skel::par
