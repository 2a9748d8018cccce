#include "handsplat/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace handsplat {

namespace {

std::atomic<int> g_threads{0};
std::atomic<bool> g_deterministic{false};
thread_local bool t_inside_parallel = false;

struct InsideGuard {
    bool previous;
    InsideGuard() : previous(t_inside_parallel) { t_inside_parallel = true; }
    ~InsideGuard() { t_inside_parallel = previous; }
};

}  // namespace

void set_num_threads(int count) { g_threads = std::max(0, count); }

int num_threads() {
    const int configured = g_threads.load();
    if (configured > 0) return configured;
    return std::max(1u, std::thread::hardware_concurrency());
}

void set_deterministic(bool enabled) { g_deterministic = enabled; }
bool deterministic() { return g_deterministic.load(); }

void parallel_for(std::size_t count, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    if (count == 0) return;
    grain = std::max<std::size_t>(grain, 1);
    const std::size_t chunks = chunk_count(count, grain);
    // Nested calls run inline on the calling worker.
    const std::size_t workers = t_inside_parallel ? 1 : std::min<std::size_t>(num_threads(), chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) {
            body(c * grain, std::min(count, (c + 1) * grain));
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        InsideGuard guard;
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            try {
                body(c * grain, std::min(count, (c + 1) * grain));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    for (auto& thread : pool) thread.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace handsplat
