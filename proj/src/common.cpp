#include "momaplan/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

namespace momaplan {

int worker_count() {
  if (const char* env = std::getenv("MOMAPLAN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace momaplan
