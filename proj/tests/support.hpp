#pragma once

// Independent reference implementations used by the tests. None of these call
// into the library code they check.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "rescal/random.hpp"
#include "rescal/tensor.hpp"

namespace oracle {

// Maclaurin series of erf in long double; accurate to ~1e-18 for |x| <= 3.
inline long double erf_series(long double x) {
  const long double two_over_sqrt_pi = 1.128379167095512573896158903121545172L;
  long double term = x, total = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    const long double add = term / (2 * n + 1);
    total += add;
    if (std::fabs(add) < 1e-22L) break;
  }
  return two_over_sqrt_pi * total;
}

inline double normal_cdf(double x) {
  return static_cast<double>(0.5L * (1.0L + erf_series(static_cast<long double>(x) / std::sqrt(2.0L))));
}

inline double normal_pdf(double x) {
  return static_cast<double>(std::exp(-0.5L * x * x) / std::sqrt(2.0L * 3.141592653589793238462643383279502884L));
}

// Direct seven-loop cross-correlation with zero padding.
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t n, std::size_t cin, std::size_t h,
                                  std::size_t w, const std::vector<double>& wt, std::size_t cout, std::size_t kh,
                                  std::size_t kw, std::size_t stride, std::size_t pad, std::size_t& ho,
                                  std::size_t& wo) {
  ho = (h + 2 * pad - kh) / stride + 1;
  wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * cout * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long x = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
                acc += in[((b * cin + c) * h + y) * w + x] * wt[((o * cin + c) * kh + u) * kw + v];
              }
          out[((b * cout + o) * ho + i) * wo + j] = acc;
        }
  return out;
}

}  // namespace oracle

namespace fixture {

inline rescal::Tensor normal(rescal::Shape shape, rescal::Rng& rng, double stddev = 1.0) {
  std::vector<double> v(rescal::shape_product(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return rescal::Tensor::create(std::move(shape), std::move(v));
}

inline rescal::Tensor uniform(rescal::Shape shape, rescal::Rng& rng, double lo, double hi) {
  std::vector<double> v(rescal::shape_product(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return rescal::Tensor::create(std::move(shape), std::move(v));
}

inline std::vector<double> to_vector(const rescal::Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace fixture
