#pragma once

#include <cstddef>
#include <functional>

namespace handsplat {

// Worker count used by parallel_for. Defaults to hardware concurrency.
void set_num_threads(int count);
int num_threads();

// When set, every reduction in the renderer and losses runs in a fixed,
// thread-count-independent order.
void set_deterministic(bool enabled);
bool deterministic();

// Splits [0, count) into contiguous chunks and runs body(begin, end) on the
// worker threads. Chunk boundaries depend only on count and grain, never on
// the thread count, so per-chunk outputs are reproducible.
void parallel_for(std::size_t count, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

inline std::size_t chunk_count(std::size_t count, std::size_t grain) {
    return grain == 0 ? 0 : (count + grain - 1) / grain;
}

}  // namespace handsplat
