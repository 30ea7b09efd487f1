// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace vidlora {

// Work partition over [0, n): every index runs exactly once and must write only its
// own output region, so results are bit-identical no matter how many threads run or
// how items are scheduled. Nested calls degrade to serial execution.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int workers() const { return static_cast<int>(threads_.size()) + 1; }

  void run(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    if (n == 1 || threads_.empty() || in_job()) {
      for (int64_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::unique_lock<std::mutex> lk(mu_);
    job_ = &fn;
    job_n_ = n;
    next_.store(0, std::memory_order_relaxed);
    pending_ = static_cast<int>(threads_.size());
    ++epoch_;
    cv_.notify_all();
    lk.unlock();

    work_loop(fn, n);

    lk.lock();
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
      ++epoch_;
      cv_.notify_all();
    }
    for (auto& t : threads_) t.join();
  }

 private:
  ThreadPool() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VIDLORA_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) n = v;
    }
    n = std::max(1, n);
    for (int i = 0; i < n - 1; ++i)
      threads_.emplace_back([this] { worker(); });
  }

  static bool& in_job() {
    thread_local bool flag = false;
    return flag;
  }

  void work_loop(const std::function<void(int64_t)>& fn, int64_t n) {
    in_job() = true;
    for (;;) {
      int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) break;
      fn(i);
    }
    in_job() = false;
  }

  void worker() {
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
      seen = epoch_;
      if (stop_) return;
      const std::function<void(int64_t)>* fn = job_;
      int64_t n = job_n_;
      lk.unlock();
      if (fn) work_loop(*fn, n);
      lk.lock();
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int64_t)>* job_ = nullptr;
  int64_t job_n_ = 0;
  std::atomic<int64_t> next_{0};
  uint64_t epoch_ = 0;
  int pending_ = 0;
  bool stop_ = false;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  ThreadPool::instance().run(n, fn);
}

}  // namespace vidlora
