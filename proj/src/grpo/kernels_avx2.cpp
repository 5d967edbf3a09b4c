// Compiled with -mavx2 -mfma. Only reached through kernels::avx2(), which
// checks CPU support first.

#include <immintrin.h>

#include <array>
#include <cmath>

#include "formaforge/grpo/kernels.hpp"
#include "kernels_internal.hpp"

namespace formaforge::grpo::kernels {

namespace {

constexpr double kLog2e = 1.4426950408889634;
// ln 2 split so that n * kLn2Hi is exact for |n| < 2^11.
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;

// 1/k! for k = 0..13. Degree-13 Taylor on |r| <= ln2/2 has truncation error
// below 5e-18, under half an ulp of the result.
constexpr std::array<double, 14> kInvFactorial = {
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
    1.0 / 479001600.0,
    1.0 / 6227020800.0,
};

// exp on four lanes. Lanes outside [-708, 709] (and NaN) go through std::exp
// so overflow, underflow and subnormals match the scalar kernel exactly.
inline __m256d exp4(__m256d x) {
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2e)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(kLn2Hi), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(kLn2Lo), r);

  __m256d p = _mm256_set1_pd(kInvFactorial[13]);
  for (int k = 12; k >= 0; --k) {
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFactorial[k]));
  }

  const __m256i n64 = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(n));
  const __m256i bits =
      _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  __m256d y = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));

  const __m256d in_range =
      _mm256_and_pd(_mm256_cmp_pd(x, _mm256_set1_pd(-708.0), _CMP_GE_OQ),
                    _mm256_cmp_pd(x, _mm256_set1_pd(709.0), _CMP_LE_OQ));
  if (_mm256_movemask_pd(in_range) != 0xF) {
    alignas(32) double xs[4];
    alignas(32) double ys[4];
    _mm256_store_pd(xs, x);
    _mm256_store_pd(ys, y);
    const int mask = _mm256_movemask_pd(in_range);
    for (int l = 0; l < 4; ++l) {
      if (!(mask & (1 << l))) ys[l] = std::exp(xs[l]);
    }
    y = _mm256_load_pd(ys);
  }
  return y;
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Loads the last `rem` (< 4) elements into a zero-padded register.
inline __m256d load_tail(const double* p, std::size_t rem) {
  alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
  for (std::size_t l = 0; l < rem; ++l) buf[l] = p[l];
  return _mm256_load_pd(buf);
}

inline __m256d clip_select(__m256d r, bool positive, __m256d lo, __m256d hi) {
  return positive ? _mm256_min_pd(r, hi) : _mm256_max_pd(r, lo);
}

double clipped_ratio_sum(std::span<const double> new_lp,
                         std::span<const double> old_lp, bool positive,
                         double lo, double hi) {
  const std::size_t n = new_lp.size();
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  __m256d acc = _mm256_setzero_pd();
  std::size_t t = 0;
  for (; t + 4 <= n; t += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(new_lp.data() + t),
                                    _mm256_loadu_pd(old_lp.data() + t));
    acc = _mm256_add_pd(acc, clip_select(exp4(d), positive, vlo, vhi));
  }
  double sum = hsum(acc);
  if (const std::size_t rem = n - t; rem != 0) {
    const __m256d d = _mm256_sub_pd(load_tail(new_lp.data() + t, rem),
                                    load_tail(old_lp.data() + t, rem));
    alignas(32) double s[4];
    _mm256_store_pd(s, clip_select(exp4(d), positive, vlo, vhi));
    for (std::size_t l = 0; l < rem; ++l) sum += s[l];
  }
  return sum;
}

inline __m256d grad4(__m256d d, bool positive, __m256d vlo, __m256d vhi,
                     __m256d vscale) {
  const __m256d r = exp4(d);
  const __m256d active = positive ? _mm256_cmp_pd(r, vhi, _CMP_LE_OQ)
                                  : _mm256_cmp_pd(r, vlo, _CMP_GE_OQ);
  return _mm256_and_pd(active, _mm256_mul_pd(vscale, r));
}

void clipped_ratio_grad(std::span<const double> new_lp,
                        std::span<const double> old_lp, bool positive,
                        double lo, double hi, double scale,
                        std::span<double> out) {
  const std::size_t n = new_lp.size();
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  const __m256d vscale = _mm256_set1_pd(scale);
  std::size_t t = 0;
  for (; t + 4 <= n; t += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(new_lp.data() + t),
                                    _mm256_loadu_pd(old_lp.data() + t));
    _mm256_storeu_pd(out.data() + t, grad4(d, positive, vlo, vhi, vscale));
  }
  if (const std::size_t rem = n - t; rem != 0) {
    const __m256d d = _mm256_sub_pd(load_tail(new_lp.data() + t, rem),
                                    load_tail(old_lp.data() + t, rem));
    alignas(32) double g[4];
    _mm256_store_pd(g, grad4(d, positive, vlo, vhi, vscale));
    for (std::size_t l = 0; l < rem; ++l) out[t + l] = g[l];
  }
}

inline __m256d k3_4(__m256d x) {
  return _mm256_sub_pd(_mm256_sub_pd(exp4(x), x), _mm256_set1_pd(1.0));
}

double k3_sum(std::span<const double> new_lp, std::span<const double> ref_lp) {
  const std::size_t n = new_lp.size();
  __m256d acc = _mm256_setzero_pd();
  std::size_t t = 0;
  for (; t + 4 <= n; t += 4) {
    const __m256d x = _mm256_sub_pd(_mm256_loadu_pd(ref_lp.data() + t),
                                    _mm256_loadu_pd(new_lp.data() + t));
    acc = _mm256_add_pd(acc, k3_4(x));
  }
  double sum = hsum(acc);
  if (const std::size_t rem = n - t; rem != 0) {
    const __m256d x = _mm256_sub_pd(load_tail(ref_lp.data() + t, rem),
                                    load_tail(new_lp.data() + t, rem));
    alignas(32) double s[4];
    _mm256_store_pd(s, k3_4(x));
    for (std::size_t l = 0; l < rem; ++l) sum += s[l];
  }
  return sum;
}

void exp_kernel(std::span<const double> in, std::span<double> out) {
  const std::size_t n = in.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out.data() + i, exp4(_mm256_loadu_pd(in.data() + i)));
  }
  if (const std::size_t rem = n - i; rem != 0) {
    alignas(32) double y[4];
    _mm256_store_pd(y, exp4(load_tail(in.data() + i, rem)));
    for (std::size_t l = 0; l < rem; ++l) out[i + l] = y[l];
  }
}

}  // namespace

const KernelTable& avx2_table_unchecked() {
  static constexpr KernelTable table{"avx2", &clipped_ratio_sum,
                                     &clipped_ratio_grad, &k3_sum, &exp_kernel};
  return table;
}

}  // namespace formaforge::grpo::kernels
