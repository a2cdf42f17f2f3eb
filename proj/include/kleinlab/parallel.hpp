#pragma once

// Static-partition parallel loops. Sums are formed per fixed-size chunk and the chunk
// totals are combined pairwise in index order, so the floating-point result does not
// depend on the number of workers.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace kleinlab {

inline int default_threads() {
    if (const char* env = std::getenv("KLEINLAB_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

template <class Fn>
void parallel_for(long long n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (long long i = 0; i < n; ++i) fn(i);
        return;
    }
    int workers = static_cast<int>(std::min<long long>(threads, n));
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        long long lo = n * w / workers, hi = n * (w + 1) / workers;
        pool.emplace_back([&, lo, hi] {
            try {
                for (long long i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline double pairwise_sum(std::vector<double> v) {
    if (v.empty()) return 0.0;
    while (v.size() > 1) {
        size_t half = (v.size() + 1) / 2;
        for (size_t i = 0; i < v.size() / 2; ++i) v[i] = v[2 * i] + v[2 * i + 1];
        if (v.size() % 2) v[half - 1] = v.back();
        v.resize(half);
    }
    return v[0];
}

template <class Fn>
double chunked_sum(long long n, int threads, Fn&& term, long long chunk = 4096) {
    long long chunks = (n + chunk - 1) / chunk;
    std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
    parallel_for(chunks, threads, [&](long long c) {
        double acc = 0.0;
        long long hi = std::min(n, (c + 1) * chunk);
        for (long long i = c * chunk; i < hi; ++i) acc += term(i);
        partial[static_cast<size_t>(c)] = acc;
    });
    return pairwise_sum(std::move(partial));
}

} // namespace kleinlab
