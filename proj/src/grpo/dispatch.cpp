#include <cstdlib>
#include <string_view>

#include "formaforge/grpo/kernels.hpp"
#include "kernels_internal.hpp"

namespace formaforge::grpo::kernels {

const KernelTable* avx2() {
#if defined(FORMAFORGE_HAVE_AVX2)
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_unchecked() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& chosen = [] () -> const KernelTable& {
    const char* forced = std::getenv("FORMAFORGE_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar") return scalar();
    if (const KernelTable* t = avx2()) return *t;
    return scalar();
  }();
  return chosen;
}

}  // namespace formaforge::grpo::kernels
