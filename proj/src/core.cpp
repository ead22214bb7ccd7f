#include "abcd/core.hpp"

#include <atomic>
#include <thread>

namespace abcd {

namespace {
std::atomic<unsigned> g_thread_limit{0};
}

void set_thread_limit(unsigned n) { g_thread_limit = n; }

unsigned thread_limit() {
  const unsigned n = g_thread_limit.load();
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

}  // namespace abcd
