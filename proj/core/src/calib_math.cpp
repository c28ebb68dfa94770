#include "rescal/calib_math.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rescal/errors.hpp"
#include "rescal/gradcheck.hpp"

namespace rescal {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_positive_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DomainError("sigma must be positive and finite, got " + std::to_string(sigma));
  }
}

}  // namespace

std::string_view cdf_mode_name(CdfMode mode) {
  switch (mode) {
    case CdfMode::exact:
      return "exact";
    case CdfMode::sigmoid_approx:
      return "sigmoid";
    case CdfMode::tanh_approx:
      return "tanh";
  }
  return "exact";
}

CdfMode parse_cdf_mode(std::string_view text) {
  if (text == "exact") return CdfMode::exact;
  if (text == "sigmoid" || text == "sigmoid_approx") return CdfMode::sigmoid_approx;
  if (text == "tanh" || text == "tanh_approx") return CdfMode::tanh_approx;
  throw ConfigError("unknown cdf mode '" + std::string(text) + "' (expected exact|sigmoid|tanh)");
}

double std_normal_cdf(double x, CdfMode mode) {
  if (x > kCdfSaturation) return 1.0;
  if (x < -kCdfSaturation) return 0.0;
  double p = 0.5;
  switch (mode) {
    case CdfMode::exact:
      // erfc form of 0.5 * (1 + erf(x / sqrt 2)); keeps the lower tail accurate
      p = 0.5 * std::erfc(-x * kInvSqrt2);
      break;
    case CdfMode::sigmoid_approx:
      p = logistic(kSigmoidCdfScale * x);
      break;
    case CdfMode::tanh_approx:
      // 0.5 * (1 + tanh(y)) == logistic(2y), without the cancellation in the lower tail
      p = logistic(2.0 * kSqrt2OverPi * (x + kTanhCdfCubic * x * x * x));
      break;
  }
  return std::clamp(p, 0.0, 1.0);
}

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double std_normal_cdf_derivative(double x, CdfMode mode) {
  if (std::abs(x) > kCdfSaturation) return 0.0;
  switch (mode) {
    case CdfMode::exact:
      return std_normal_pdf(x);
    case CdfMode::sigmoid_approx: {
      const double s = logistic(kSigmoidCdfScale * x);
      return kSigmoidCdfScale * s * (1.0 - s);
    }
    case CdfMode::tanh_approx: {
      const double s = logistic(2.0 * kSqrt2OverPi * (x + kTanhCdfCubic * x * x * x));
      return 2.0 * s * (1.0 - s) * kSqrt2OverPi * (1.0 + 3.0 * kTanhCdfCubic * x * x);
    }
  }
  return 0.0;
}

double calibration_weight(double a, double mu, double sigma, CdfMode mode) {
  require_positive_sigma(sigma);
  const double x = (a - mu) / sigma;
  // every mode is symmetric, so 1 - Phi(x) == Phi(-x); the latter keeps the upper tail exact
  return a <= mu ? std_normal_cdf(x, mode) : std_normal_cdf(-x, mode);
}

double calibration_value(double a, double mu, double sigma, CdfMode mode) {
  return a * calibration_weight(a, mu, sigma, mode);
}

CalibrationPartials calibration_value_partials(double a, double mu, double sigma, CdfMode mode) {
  require_positive_sigma(sigma);
  const double x = (a - mu) / sigma;
  const bool below = a <= mu;
  const double w = std_normal_cdf(below ? x : -x, mode);
  const double dw_dx = (below ? 1.0 : -1.0) * std_normal_cdf_derivative(x, mode);
  const double k = a * dw_dx / sigma;
  return {a * w, w + k, -k, -k * x};
}

CalibrationPartials calibration_weight_partials(double a, double mu, double sigma, CdfMode mode) {
  require_positive_sigma(sigma);
  const double x = (a - mu) / sigma;
  const bool below = a <= mu;
  const double dw_dx = (below ? 1.0 : -1.0) * std_normal_cdf_derivative(x, mode);
  const double k = dw_dx / sigma;
  return {std_normal_cdf(below ? x : -x, mode), k, -k, -k * x};
}

double gclu(double a, CdfMode mode) {
  const double relu = a > 0.0 ? a : 0.0;
  return relu + calibration_value(a, 0.0, 1.0, mode);
}

double gclu_derivative(double a, CdfMode mode) {
  const double phi = std_normal_cdf(a, mode);
  const double dphi = std_normal_cdf_derivative(a, mode);
  if (a <= 0.0) return phi + a * dphi;
  return 2.0 - phi - a * dphi;
}

Tensor gclu(const Tensor& x, CdfMode mode) {
  const bool tracked = needs_grad({&x});
  Tensor out = make_output(x.shape(), tracked);
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    note_kink_distance(std::abs(xs[i]));
    ys[i] = gclu(xs[i], mode);
  }
  record_op(tracked, {x}, out, [x, out, mode] {
    auto g = out.grad();
    auto xs = x.data();
    auto gx = x.grad_mut();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += g[i] * gclu_derivative(xs[i], mode);
  });
  return out;
}

namespace {

template <bool WeightOnly>
Tensor calibration_elementwise(const Tensor& features, const Tensor& mu, const Tensor& sigma, CdfMode mode) {
  if (features.rank() < 2 || mu.rank() != 2 || sigma.shape() != mu.shape() || mu.dim(0) != features.dim(0) ||
      mu.dim(1) != features.dim(1)) {
    throw ShapeError("calibration: features " + shape_string(features.shape()) + ", mu " +
                     shape_string(mu.shape()) + ", sigma " + shape_string(sigma.shape()));
  }
  const std::size_t groups = mu.size();
  const std::size_t inner = groups == 0 ? 0 : features.size() / groups;
  const bool tracked = needs_grad({&features, &mu, &sigma});
  Tensor out = make_output(features.shape(), tracked);
  auto as = features.data(), ms = mu.data(), ss = sigma.data();
  auto ys = out.mutable_data();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t j = 0; j < inner; ++j) {
      const double a = as[gi * inner + j];
      note_kink_distance(std::abs(a - ms[gi]));
      ys[gi * inner + j] = WeightOnly ? calibration_weight(a, ms[gi], ss[gi], mode)
                                      : calibration_value(a, ms[gi], ss[gi], mode);
    }
  }
  record_op(tracked, {features, mu, sigma}, out, [features, mu, sigma, out, mode, groups, inner] {
    auto g = out.grad();
    auto as = features.data(), ms = mu.data(), ss = sigma.data();
    std::span<double> ga, gm, gs;
    if (features.requires_grad()) ga = features.grad_mut();
    if (mu.requires_grad()) gm = mu.grad_mut();
    if (sigma.requires_grad()) gs = sigma.grad_mut();
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double acc_mu = 0.0, acc_sigma = 0.0;
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t idx = gi * inner + j;
        const auto p = WeightOnly ? calibration_weight_partials(as[idx], ms[gi], ss[gi], mode)
                                  : calibration_value_partials(as[idx], ms[gi], ss[gi], mode);
        if (!ga.empty()) ga[idx] += g[idx] * p.d_a;
        acc_mu += g[idx] * p.d_mu;
        acc_sigma += g[idx] * p.d_sigma;
      }
      if (!gm.empty()) gm[gi] += acc_mu;
      if (!gs.empty()) gs[gi] += acc_sigma;
    }
  });
  return out;
}

}  // namespace

Tensor calibration_map(const Tensor& features, const Tensor& mu, const Tensor& sigma, CdfMode mode) {
  return calibration_elementwise<false>(features, mu, sigma, mode);
}

Tensor calibration_weights(const Tensor& features, const Tensor& mu, const Tensor& sigma, CdfMode mode) {
  return calibration_elementwise<true>(features, mu, sigma, mode);
}

}  // namespace rescal
