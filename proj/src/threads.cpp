#include "mmflow/threads.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mmflow {

int thread_cap() {
    static const int cap = [] {
        const char* env = std::getenv("MMFLOW_THREADS");
        if (!env) return 1;
        int v = std::atoi(env);
        return v < 1 ? 1 : v;
    }();
    return cap;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    int workers = static_cast<int>(std::min<int64_t>(thread_cap(), n));
    if (workers <= 1) {
        body(0, n);
        return;
    }
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        int64_t b = w * chunk;
        int64_t e = std::min<int64_t>(b + chunk, n);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace mmflow
