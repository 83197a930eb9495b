#include "occ/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace occ {
namespace {

std::atomic<std::size_t> g_override{0};

std::size_t default_threads() {
  if (const char* env = std::getenv("OCC_FORGE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      // fall through to hardware default
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

std::size_t thread_count() {
  const std::size_t o = g_override.load();
  return o > 0 ? o : default_threads();
}

void set_thread_count(std::size_t n) { g_override.store(n); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_grain) {
  if (end <= begin) return;
  const std::size_t total = end - begin;
  const std::size_t grain = std::max<std::size_t>(1, min_grain);
  const std::size_t workers =
      std::min(thread_count(), (total + grain - 1) / grain);
  if (workers <= 1) {
    body(begin, end);
    return;
  }

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto run = [&](std::size_t lo, std::size_t hi) {
    try {
      body(lo, hi);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };

  const std::size_t chunk = total / workers;
  const std::size_t extra = total % workers;
  std::size_t lo = begin;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t hi = lo + chunk + (w < extra ? 1 : 0);
    if (w + 1 == workers) {
      run(lo, hi);
    } else {
      pool.emplace_back(run, lo, hi);
    }
    lo = hi;
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace occ
