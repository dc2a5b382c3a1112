#include "collabctx/parallel.hpp"

#include <cstdlib>
#include <string>

namespace collabctx {

int worker_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("CC_THREADS")) {
    try {
      int cap = std::stoi(env);
      if (cap > 0) return std::min(cap, hw);
    } catch (const std::exception&) {
    }
  }
  return hw;
}

}  // namespace collabctx
