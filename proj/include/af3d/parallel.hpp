#pragma once

#include <cstddef>
#include <functional>

namespace af3d {

/// Sets the worker count used by parallel_for; 1 runs everything inline on the caller.
void set_thread_count(int threads);
int thread_count();

/// Flushes subnormal floats to zero on the calling thread (x86 FTZ/DAZ). Tiny loss gradients
/// otherwise drive the convolutions onto the slow subnormal path.
void enable_flush_to_zero();

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker, so any
/// computation whose outputs are partitioned by index is bit-identical for every thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace af3d
