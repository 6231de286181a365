// Deterministic fan-out over independent runs: each index writes only its own
// slot, so results are identical no matter how many workers execute.

#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace covert {

inline void parallel_for(int count, const std::function<void(int)>& body) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = static_cast<int>(std::min<unsigned>(hw, count > 0 ? count : 1));
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < count; i += workers) body(i);
        });
    for (auto& t : pool) t.join();
}

} // namespace covert
