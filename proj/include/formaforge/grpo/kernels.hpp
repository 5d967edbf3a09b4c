#pragma once

// Per-sequence token kernels behind grpo-core. Every kernel has a scalar
// reference implementation; an AVX2+FMA variant is selected at runtime when
// the CPU supports it. Both must agree to within a few ulp (tests/test_kernels.cpp).
//
// Clip semantics, for advantage A and ratio r = exp(new - old):
//   min(r*A, clip(r, lo, hi)*A) = A * min(r, hi)   if A > 0
//                               = A * max(r, lo)   if A < 0
// so a sequence only needs the sum of the clipped ratios.

#include <cstddef>
#include <span>
#include <string_view>

namespace formaforge::grpo::kernels {

struct KernelTable {
  std::string_view name;

  /// sum_t (A > 0 ? min(r_t, hi) : max(r_t, lo)). Callers skip A == 0.
  double (*clipped_ratio_sum)(std::span<const double> new_lp,
                              std::span<const double> old_lp, bool positive,
                              double lo, double hi);

  /// out_t = scale * r_t where the unclipped branch is active, else 0.
  /// `scale` already folds in A / (G * |o_i|).
  void (*clipped_ratio_grad)(std::span<const double> new_lp,
                             std::span<const double> old_lp, bool positive,
                             double lo, double hi, double scale,
                             std::span<double> out);

  /// sum_t exp(x_t) - x_t - 1 with x_t = ref_t - new_t.
  double (*k3_sum)(std::span<const double> new_lp,
                   std::span<const double> ref_lp);

  /// Elementwise exp.
  void (*exp)(std::span<const double> in, std::span<double> out);
};

const KernelTable& scalar();

/// nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2();

/// The table used by grpo-core. Picks AVX2 when available unless the
/// environment variable FORMAFORGE_SIMD is set to "scalar".
const KernelTable& active();

}  // namespace formaforge::grpo::kernels
