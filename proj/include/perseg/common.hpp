#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace perseg {

// Production scalar. Gradient-check tests instantiate the templated core with
// double instead; this alias only controls the trained pipeline.
using real_t = float;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Worker cap for the few embarrassingly parallel loops (loading, descriptor
// extraction). PERSONASEG_THREADS=<n> overrides; default 1 worker per core.
int env_thread_cap();

// Static partition over [0, n). Each worker owns a disjoint index range, so
// results are independent of the thread count.
template <class F>
void parallel_for(std::int64_t n, F&& f, int max_threads = 0) {
  if (n <= 0) return;
  int cap = env_thread_cap();
  if (max_threads > 0 && max_threads < cap) cap = max_threads;
  if (cap > n) cap = static_cast<int>(n);
  if (cap <= 1) {
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(cap);
  for (int t = 0; t < cap; ++t) {
    std::int64_t lo = n * t / cap;
    std::int64_t hi = n * (t + 1) / cap;
    pool.emplace_back([lo, hi, &f] {
      for (std::int64_t i = lo; i < hi; ++i) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace perseg
