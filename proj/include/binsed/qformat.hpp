#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "binsed/tensors.hpp"

namespace binsed {

inline constexpr int kMinFractionalBits = -64;

// Largest fractional bit count f (capped at bitwidth - 1) such that at least
// 99.9% of `values` satisfy |round(v * 2^f)| <= 2^(bitwidth-1) - 1. The rest
// saturate. A set whose 99.9% quantile magnitude is zero gets bitwidth - 1.
inline int choose_qformat(std::span<const double> values, int bitwidth) {
  if (values.empty()) throw std::invalid_argument("choose_qformat: empty value set");
  if (bitwidth < 2 || bitwidth > 32) throw std::invalid_argument("choose_qformat: bitwidth out of range");
  std::vector<double> mag(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw std::invalid_argument("choose_qformat: non-finite value");
    mag[i] = std::fabs(values[i]);
  }
  // Values that must fit: the ceil(0.999 n) smallest magnitudes.
  const std::size_t n = mag.size();
  const std::size_t need = (999 * n + 999) / 1000;
  auto nth = mag.begin() + static_cast<std::ptrdiff_t>(need - 1);
  std::nth_element(mag.begin(), nth, mag.end());
  const double q = *nth;

  const double limit = static_cast<double>(signed_max(bitwidth));
  int f = bitwidth - 1;
  if (q == 0.0) return f;
  while (f > kMinFractionalBits && std::round(std::ldexp(q, f)) > limit) --f;
  return f;
}

}  // namespace binsed
