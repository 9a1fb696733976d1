#ifndef ARCHWARP_PARALLEL_HPP
#define ARCHWARP_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace archwarp {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
    static std::atomic<std::size_t> n{0};
    return n;
}
}  // namespace detail

/// Number of worker threads used by voxel loops. 0 selects hardware parallelism.
inline void set_thread_count(std::size_t n) { detail::thread_setting() = n; }

inline std::size_t thread_count() {
    const std::size_t n = detail::thread_setting();
    if (n != 0) return n;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Calls fn(begin, end) over contiguous chunks of [0, n). Chunks never
/// overlap, so fn may write to disjoint outputs without synchronisation.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t grain = 4096) {
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1 || n < grain) {
        if (n > 0) fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        const std::size_t b = t * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

/// Sum of term(i) for i in [0, n). Partial sums are taken over fixed blocks of
/// kBlock indices and then added in block order, so the result is bitwise
/// identical for every thread count.
template <class Term>
double deterministic_sum(std::size_t n, Term&& term) {
    constexpr std::size_t kBlock = 2048;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(blocks, 0.0);
    parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            double acc = 0.0;
            const std::size_t e = std::min(n, (b + 1) * kBlock);
            for (std::size_t i = b * kBlock; i < e; ++i) acc += term(i);
            partial[b] = acc;
        }
    }, 2);
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace archwarp

#endif
