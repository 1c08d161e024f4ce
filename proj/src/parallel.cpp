#include "sgt/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace sgt {

int worker_count() {
    const char* env = std::getenv("SGT_THREADS");
    if (!env) {
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(std::min(hw, 64u));
    }
    int n = std::atoi(env);
    if (n < 1) return 1;
    return std::min(n, 64);
}

void run_indexed(std::size_t total, const std::function<void(std::size_t)>& fn) {
    const int nw = worker_count();
    if (nw <= 1 || total < 2) {
        for (std::size_t k = 0; k < total; ++k) fn(k);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(nw), total);
    const std::size_t per = (total + chunks - 1) / chunks;
    std::vector<std::exception_ptr> errs(chunks);
    std::vector<std::size_t> err_at(chunks, total);
    std::vector<std::thread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * per;
        const std::size_t hi = std::min(total, lo + per);
        pool.emplace_back([&, c, lo, hi]() {
            for (std::size_t k = lo; k < hi; ++k) {
                try {
                    fn(k);
                } catch (...) {
                    errs[c] = std::current_exception();
                    err_at[c] = k;
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    std::size_t first = total;
    std::exception_ptr eptr;
    for (std::size_t c = 0; c < chunks; ++c) {
        if (errs[c] && err_at[c] < first) {
            first = err_at[c];
            eptr = errs[c];
        }
    }
    if (eptr) std::rethrow_exception(eptr);
}

} // namespace sgt
