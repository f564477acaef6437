#ifndef VOXLOC_PARALLEL_HPP
#define VOXLOC_PARALLEL_HPP

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace voxloc {

// Runs fn(0..n-1) on up to `threads` workers in static chunks. Results must
// be written to disjoint slots so the outcome is independent of scheduling.
// The first worker exception is rethrown on the calling thread.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace voxloc

#endif
