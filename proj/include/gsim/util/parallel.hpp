#pragma once

#include <atomic>
#include <cstdlib>
#include <cstddef>
#include <string>
#include <thread>
#include <vector>

namespace gsim {

// Worker count: GUARDIAN_SIM_THREADS caps hardware_concurrency; unset or 0
// means use all hardware threads; 1 disables spawning entirely.
inline unsigned worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("GUARDIAN_SIM_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && v > 0 && v < hw) return static_cast<unsigned>(v);
  }
  return hw;
}

// Runs fn(i) for i in [0, n). Each index writes only to its own output slot,
// so results are identical for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const unsigned spawn = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  pool.reserve(spawn - 1);
  for (unsigned t = 1; t < spawn; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace gsim
