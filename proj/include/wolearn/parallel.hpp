#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace wolearn {

// Worker count: `requested` when positive, otherwise the hardware concurrency.
inline int resolve_workers(int requested) {
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

// Calls fn(i) for i in [0, n) on a bounded pool. Each index is handled once;
// callers write results by index, so output never depends on scheduling.
// The first exception thrown by any task is rethrown after all workers join.
template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
    const auto pool = static_cast<std::size_t>(std::min<std::size_t>(resolve_workers(workers), std::max<std::size_t>(n, 1)));
    if (pool <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < pool; ++k) threads.emplace_back(run);
    for (auto& th : threads) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace wolearn
