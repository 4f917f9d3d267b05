#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tflow {

/// Fixed-size worker pool for index-parallel loops. Bodies must write
/// only to their own index's slot; all reductions happen serially in the
/// caller afterwards, which keeps results independent of scheduling.
class ThreadPool {
 public:
  explicit ThreadPool(unsigned workers = std::thread::hardware_concurrency()) {
    const unsigned extra = workers > 1 ? workers - 1 : 0;
    threads_.reserve(extra);
    for (unsigned i = 0; i < extra; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  unsigned size() const { return static_cast<unsigned>(threads_.size()) + 1; }

  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    if (threads_.empty() || n <= 1) {
      for (std::size_t i = 0; i < n; ++i) body(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mutex_);
      body_ = &body;
      next_.store(0, std::memory_order_relaxed);
      total_ = n;
      active_.store(static_cast<int>(threads_.size()), std::memory_order_relaxed);
      ++generation_;
    }
    cv_.notify_all();
    drain(body);
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait(lock, [this] { return active_.load() == 0; });
    body_ = nullptr;
  }

 private:
  void drain(const std::function<void(std::size_t)>& body) {
    const std::size_t chunk = std::max<std::size_t>(1, total_ / (8 * size()));
    for (;;) {
      const std::size_t begin = next_.fetch_add(chunk);
      if (begin >= total_) break;
      const std::size_t end = std::min(begin + chunk, total_);
      for (std::size_t i = begin; i < end; ++i) body(i);
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t)>* body = nullptr;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        body = body_;
      }
      if (body != nullptr) {
        drain(*body);
        if (active_.fetch_sub(1) == 1) {
          std::unique_lock<std::mutex> lock(mutex_);
          done_cv_.notify_all();
        }
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* body_ = nullptr;
  std::atomic<std::size_t> next_{0};
  std::size_t total_ = 0;
  std::atomic<int> active_{0};
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

/// Runs the body over [0, n), on the pool when one is supplied.
inline void for_each_index(ThreadPool* pool, std::size_t n,
                           const std::function<void(std::size_t)>& body) {
  if (pool != nullptr) {
    pool->parallel_for(n, body);
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
}

}  // namespace tflow
