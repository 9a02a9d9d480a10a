#include "af3d/parallel.hpp"

#include <atomic>
#include <memory>
#include <mutex>

#include <cblas.h>
#include <tbb/global_control.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "af3d/error.hpp"

namespace af3d {

namespace {

std::atomic<int> g_threads{1};
std::mutex g_control_mutex;
std::unique_ptr<tbb::global_control> g_control;

}  // namespace

void set_thread_count(int threads) {
    require(threads >= 1, ErrorCode::InvalidArgument, "thread count must be >= 1");
    std::lock_guard lock(g_control_mutex);
    g_control = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                      static_cast<std::size_t>(threads));
    openblas_set_num_threads(threads);
    enable_flush_to_zero();
    g_threads = threads;
}

int thread_count() { return g_threads.load(); }

void enable_flush_to_zero() {
#if defined(__SSE__)
    _mm_setcsr(_mm_getcsr() | 0x8040);
#endif
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    if (g_threads.load() <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n), [&](const tbb::blocked_range<std::size_t>& r) {
        enable_flush_to_zero();
        for (std::size_t i = r.begin(); i != r.end(); ++i) {
            body(i);
        }
    });
}

}  // namespace af3d
