#include <algorithm>
#include <cmath>

#include "formaforge/grpo/kernels.hpp"

namespace formaforge::grpo::kernels {

namespace {

double clipped_ratio_sum(std::span<const double> new_lp,
                         std::span<const double> old_lp, bool positive,
                         double lo, double hi) {
  double sum = 0.0;
  for (std::size_t t = 0; t < new_lp.size(); ++t) {
    const double r = std::exp(new_lp[t] - old_lp[t]);
    sum += positive ? std::min(r, hi) : std::max(r, lo);
  }
  return sum;
}

void clipped_ratio_grad(std::span<const double> new_lp,
                        std::span<const double> old_lp, bool positive,
                        double lo, double hi, double scale,
                        std::span<double> out) {
  for (std::size_t t = 0; t < new_lp.size(); ++t) {
    const double r = std::exp(new_lp[t] - old_lp[t]);
    const bool unclipped = positive ? r <= hi : r >= lo;
    out[t] = unclipped ? scale * r : 0.0;
  }
}

double k3_sum(std::span<const double> new_lp, std::span<const double> ref_lp) {
  double sum = 0.0;
  for (std::size_t t = 0; t < new_lp.size(); ++t) {
    const double x = ref_lp[t] - new_lp[t];
    sum += std::exp(x) - x - 1.0;
  }
  return sum;
}

void exp_kernel(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
}

}  // namespace

const KernelTable& scalar() {
  static constexpr KernelTable table{"scalar", &clipped_ratio_sum,
                                     &clipped_ratio_grad, &k3_sum, &exp_kernel};
  return table;
}

}  // namespace formaforge::grpo::kernels
