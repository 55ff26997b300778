#pragma once

#include <cstddef>
#include <functional>

namespace pflow {

/// Global worker count. 1 (the default) means fully serial execution, which
/// is the bit-reproducible mode; the CLI exposes it as --threads.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs body(begin, end) over a fixed chunking of [0, n). Chunk boundaries
/// depend only on n and the configured thread count, never on scheduling, so
/// any reduction done chunk-by-chunk in index order is reproducible for a
/// given thread count. Nested calls from inside a worker run serially.
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

/// Element-wise convenience over parallel_chunks.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    parallel_chunks(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) f(i);
    });
}

}  // namespace pflow
