#pragma once

#include "formaforge/grpo/kernels.hpp"

namespace formaforge::grpo::kernels {

#if defined(FORMAFORGE_HAVE_AVX2)
// Defined in kernels_avx2.cpp. Executes AVX2/FMA instructions.
const KernelTable& avx2_table_unchecked();
#endif

}  // namespace formaforge::grpo::kernels
