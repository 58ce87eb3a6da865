#include <atomic>
#include <cstdlib>
#include <string_view>

#include "mucald/kernels.hpp"

namespace mucald::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* pick_default() {
  if (const char* env = std::getenv("MUCALD_SIMD")) {
    if (std::string_view(env) == "scalar") return &scalar_table();
  }
  if (avx2_table() != nullptr && cpu_has_avx2()) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{pick_default()};
  return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  if (name == "scalar") {
    slot().store(&scalar_table());
    return true;
  }
  if (name == "avx2" && avx2_table() != nullptr && cpu_has_avx2()) {
    slot().store(avx2_table());
    return true;
  }
  return false;
}

}  // namespace mucald::kernels
