#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace liplocal {

// Fixed-size worker pool. The CLI constructs one and hands it down; modules
// never spawn threads themselves. A null pool means "run serially".
class ThreadPool {
  public:
    explicit ThreadPool(std::size_t num_threads) {
        if (num_threads == 0) num_threads = 1;
        for (std::size_t i = 0; i < num_threads; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    std::size_t size() const { return workers_.size(); }

    void submit(std::function<void()> job) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            jobs_.push(std::move(job));
        }
        cv_.notify_one();
    }

  private:
    void worker_loop() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stopping_ || !jobs_.empty(); });
                if (stopping_ && jobs_.empty()) return;
                job = std::move(jobs_.front());
                jobs_.pop();
            }
            job();
        }
    }

    std::vector<std::thread> workers_;
    std::queue<std::function<void()>> jobs_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stopping_ = false;
};

// Runs fn(i) for i in [0, n). Results must not depend on execution order;
// callers that accumulate do so per-index and reduce in index order.
inline void parallel_for(ThreadPool* pool, std::size_t n, const std::function<void(std::size_t)>& fn) {
    if (pool == nullptr || pool->size() <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex mu;
    std::condition_variable cv;
    std::exception_ptr first_error;
    std::mutex err_mu;

    const std::size_t jobs = std::min(pool->size(), n);
    for (std::size_t j = 0; j < jobs; ++j) {
        pool->submit([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
            {
                std::lock_guard<std::mutex> lk(mu);
                ++done;
            }
            cv.notify_one();
        });
    }
    std::unique_lock<std::mutex> lk(mu);
    cv.wait(lk, [&] { return done == jobs; });
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace liplocal
