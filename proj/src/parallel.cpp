#include "advknn/parallel.hpp"

#include <atomic>
#include <mutex>

namespace advknn {

namespace {
std::atomic<int> g_workers{0};
}

int default_workers() {
    int n = g_workers.load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_default_workers(int n) { g_workers.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  int workers) {
    if (n == 0) return;
    std::size_t w = workers > 0 ? static_cast<std::size_t>(workers)
                                : static_cast<std::size_t>(default_workers());
    w = std::min(w, n);
    if (w <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(w);
    std::size_t chunk = (n + w - 1) / w;
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (std::size_t t = 0; t < w; ++t) {
        std::size_t begin = t * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace advknn
