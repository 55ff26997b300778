#include "pflow/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace pflow {
namespace {

std::atomic<unsigned> g_threads{1};
thread_local bool tl_in_worker = false;

/// Minimal persistent pool: one task queue of (chunk index -> range) jobs.
/// Workers are lazily (re)created when the requested size changes.
class Pool {
public:
    static Pool& instance() {
        static Pool p;
        return p;
    }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
             unsigned workers) {
        ensure(workers);
        const std::size_t chunks = workers;
        const std::size_t step = (n + chunks - 1) / chunks;
        std::atomic<std::size_t> next{0};
        std::atomic<std::size_t> done{0};
        {
            std::lock_guard<std::mutex> lk(m_);
            job_ = [&, step, n](std::size_t) {
                for (;;) {
                    std::size_t c = next.fetch_add(1);
                    std::size_t b = c * step;
                    if (b >= n) break;
                    std::size_t e = b + step < n ? b + step : n;
                    body(b, e);
                }
                done.fetch_add(1);
            };
            epoch_++;
        }
        cv_.notify_all();
        // The calling thread participates too; mark it as a worker so any
        // nested parallel region degrades to serial instead of re-entering.
        tl_in_worker = true;
        job_(0);
        tl_in_worker = false;
        while (done.load() < size_ + 1) std::this_thread::yield();
        std::lock_guard<std::mutex> lk(m_);
        job_ = nullptr;
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
            epoch_++;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void ensure(unsigned workers) {
        unsigned want = workers > 0 ? workers - 1 : 0;  // caller counts as one
        if (want == size_) return;
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
            epoch_++;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
        threads_.clear();
        stop_ = false;
        size_ = want;
        for (unsigned i = 0; i < want; ++i) {
            threads_.emplace_back([this] {
                tl_in_worker = true;
                std::uint64_t seen = 0;
                for (;;) {
                    std::function<void(std::size_t)> j;
                    {
                        std::unique_lock<std::mutex> lk(m_);
                        cv_.wait(lk, [&] { return stop_ || (job_ && epoch_ != seen); });
                        if (stop_) return;
                        seen = epoch_;
                        j = job_;
                    }
                    if (j) j(1);
                }
            });
        }
    }

    std::mutex m_;
    std::condition_variable cv_;
    std::vector<std::thread> threads_;
    std::function<void(std::size_t)> job_;
    std::uint64_t epoch_ = 0;
    bool stop_ = false;
    unsigned size_ = 0;
};

}  // namespace

void set_thread_count(unsigned n) { g_threads.store(n == 0 ? 1 : n); }

unsigned thread_count() { return g_threads.load(); }

void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    unsigned workers = g_threads.load();
    if (workers <= 1 || n == 1 || tl_in_worker) {
        body(0, n);
        return;
    }
    Pool::instance().run(n, body, workers);
}

}  // namespace pflow
