// Small persistent worker pool. Work is partitioned into fixed chunks that
// write disjoint output ranges, so results never depend on the thread count.
#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace movnect {

namespace detail {

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  int worker_count() const { return static_cast<int>(workers_.size()); }

  // Runs fn(begin, end) over [0, n) in chunks of `grain`; blocks until done.
  // One job at a time; concurrent callers from different threads serialize.
  void run(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    std::lock_guard<std::mutex> job_owner(run_mutex_);
    if (grain < 1) grain = 1;
    {
      std::lock_guard<std::mutex> lk(job_mutex_);
      job_fn_ = &fn;
      job_n_ = n;
      job_grain_ = grain;
      next_.store(0, std::memory_order_relaxed);
      pending_.store(worker_count(), std::memory_order_relaxed);
      ++generation_;
    }
    wake_.notify_all();
    drain(fn, n, grain);
    // wait for workers to finish their chunks
    std::unique_lock<std::mutex> lk(job_mutex_);
    done_.wait(lk, [&] { return pending_.load(std::memory_order_acquire) == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() {
    int n = default_threads() - 1;
    for (int i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
  }
  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(job_mutex_);
      stop_ = true;
      ++generation_;
    }
    wake_.notify_all();
    for (auto& w : workers_) w.join();
  }

  static int default_threads() {
    if (const char* env = std::getenv("MOVNECT_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }

  void drain(const std::function<void(int64_t, int64_t)>& fn, int64_t n, int64_t grain) {
    for (;;) {
      int64_t b = next_.fetch_add(grain, std::memory_order_relaxed);
      if (b >= n) break;
      fn(b, std::min(n, b + grain));
    }
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn = nullptr;
      int64_t n = 0, grain = 1;
      {
        std::unique_lock<std::mutex> lk(job_mutex_);
        wake_.wait(lk, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        fn = job_fn_;
        n = job_n_;
        grain = job_grain_;
      }
      if (fn) drain(*fn, n, grain);
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(job_mutex_);
        done_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex run_mutex_;
  std::mutex job_mutex_;
  std::condition_variable wake_, done_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0, job_grain_ = 1;
  std::atomic<int64_t> next_{0};
  std::atomic<int> pending_{0};
  uint64_t generation_ = 0;
  bool stop_ = false;
};

inline int& thread_limit() {
  thread_local int limit = 0;  // 0 = use pool default
  return limit;
}

}  // namespace detail

// Caps op-internal parallelism for the calling thread (1 = serial). Used by
// the latency benchmark to pin a single worker.
inline void set_max_threads(int n) { detail::thread_limit() = n; }
inline int max_threads() {
  int limit = detail::thread_limit();
  int pool = detail::Pool::instance().worker_count() + 1;
  return limit > 0 ? std::min(limit, pool) : pool;
}

// fn(begin, end) over [0, n). `work_per_item` is a rough flop estimate used
// to skip the pool when the job is too small to be worth waking threads.
template <typename F>
void parallel_for(int64_t n, int64_t work_per_item, F&& fn) {
  if (n <= 0) return;
  const int64_t kMinWork = 64 * 1024;
  if (max_threads() <= 1 || n * work_per_item < kMinWork * 2) {
    fn(0, n);
    return;
  }
  int64_t grain = std::max<int64_t>(1, kMinWork / std::max<int64_t>(1, work_per_item));
  std::function<void(int64_t, int64_t)> f = std::forward<F>(fn);
  detail::Pool::instance().run(n, grain, f);
}

}  // namespace movnect
