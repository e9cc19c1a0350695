#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace acvae {

// Worker cap: ACVAE_THREADS if set, else hardware concurrency; at least 1.
inline std::size_t worker_count(std::size_t jobs) {
    std::size_t cap = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("ACVAE_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) cap = static_cast<std::size_t>(v);
    }
    if (cap == 0) cap = 1;
    return std::min(cap, jobs ? jobs : std::size_t(1));
}

// Static chunking, so output slot i is always computed by the same job index;
// callers write results by index for deterministic ordering.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
    const std::size_t workers = worker_count(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

} // namespace acvae
