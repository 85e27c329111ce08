#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dynaconv/errors.hpp"

extern "C" void openblas_set_num_threads(int);

namespace dynaconv {

/// Worker count: explicit value if positive, else DYNACONV_THREADS, else 1.
inline int resolve_threads(int configured = 0) {
    if (configured > 0) return configured;
    if (const char* env = std::getenv("DYNACONV_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("DYNACONV_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

/// BLAS calls run single-threaded; concurrency comes from the callers.
inline void pin_blas_single_thread() {
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

/// Runs fn(i) for i in [0, count) on `threads` workers pulling indices from a
/// shared counter. The first exception stops further work and is rethrown.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    pin_blas_single_thread();
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; !failed && (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace dynaconv
