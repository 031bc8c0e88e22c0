#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

// Branch-light transcendentals for the hot elementwise kernels. Plain IEEE
// arithmetic only, so the compiler can vectorize the surrounding loops and
// every element gives the same bits regardless of chunking or thread count.
// Accuracy is a few ulp, which the tolerances in this project never notice;
// NaN inputs propagate.

namespace policyscope::fastmath {

// exp(x), exact 0 below -708, inf above 709.
inline double exp(double x) {
  constexpr double inv_ln2 = 1.44269504088896340736;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;

  const double c = x < -708.0 ? -708.0 : (x > 709.0 ? 709.0 : x);
  const double k = __builtin_rint(c * inv_ln2);
  const double r = (c - k * ln2_hi) - k * ln2_lo;

  // degree-13 Taylor of e^r on |r| <= ln2/2
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;

  const int64_t ki = static_cast<int64_t>(k);
  const double scale = std::bit_cast<double>((ki + 1023) << 52);
  double out = p * scale;
  out = x < -708.0 ? 0.0 : out;
  out = x > 709.0 ? std::numeric_limits<double>::infinity() : out;
  out = x != x ? x : out;
  return out;
}

inline double tanh(double x) {
  const double a = std::fabs(x);
  const double y = a > 19.0 ? 19.0 : a;  // saturated to 1 within 1 ulp past 19
  const double t = fastmath::exp(-2.0 * y);
  const double r = (1.0 - t) / (1.0 + t);
  double out = x < 0.0 ? -r : r;
  out = x != x ? x : out;
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + fastmath::exp(-x)); }

}  // namespace policyscope::fastmath
