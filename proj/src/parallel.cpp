#include "nar/parallel.hpp"

#include <cstdlib>
#include <string>

namespace nar {

int configured_threads() {
  const char* env = std::getenv("NAR_THREADS");
  if (env == nullptr) return 1;
  try {
    const int n = std::stoi(env);
    return n > 0 ? n : 1;
  } catch (...) {
    return 1;
  }
}

}  // namespace nar
