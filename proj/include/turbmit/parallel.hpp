#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace turbmit {

/// Process-wide worker count; 0 = hardware concurrency.  Results never depend
/// on this value: loops partition work by index and write to disjoint slots.
inline std::atomic<int> global_thread_count{0};

inline int effective_threads() {
    int t = global_thread_count.load();
    if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
    return t > 0 ? t : 1;
}

/// Runs fn(i) for i in [0, n).  Exceptions from workers are rethrown once.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int threads = effective_threads();
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int spawn = std::min<std::size_t>(threads, n);
    pool.reserve(spawn);
    for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace turbmit
