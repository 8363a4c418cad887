#include "perseg/common.hpp"

#include <cstdlib>
#include <string>

namespace perseg {

int env_thread_cap() {
  static int cap = [] {
    const char* env = std::getenv("PERSONASEG_THREADS");
    if (env != nullptr) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return cap;
}

}  // namespace perseg
