#pragma once

#include <string>
#include <string_view>

#include "rescal/tensor.hpp"

namespace rescal {

// How the standard normal CDF is evaluated.
//   exact           0.5 * (1 + erf(x / sqrt(2)))
//   sigmoid_approx  logistic(1.702 x)
//   tanh_approx     0.5 * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))
enum class CdfMode { exact, sigmoid_approx, tanh_approx };

inline constexpr double kSigmoidCdfScale = 1.702;
inline constexpr double kTanhCdfCubic = 0.044715;
// Beyond this |x| the CDF is returned as exactly 0 or 1.
inline constexpr double kCdfSaturation = 12.0;

std::string_view cdf_mode_name(CdfMode mode);
// Accepts "exact", "sigmoid", "tanh" (and the *_approx spellings).
CdfMode parse_cdf_mode(std::string_view text);

double std_normal_cdf(double x, CdfMode mode = CdfMode::exact);
double std_normal_pdf(double x);

// d/dx of std_normal_cdf in the given mode. For the approximations this is the
// derivative of the approximation itself, so forward and backward agree.
double std_normal_cdf_derivative(double x, CdfMode mode = CdfMode::exact);

// Confidence of response `a` under N(mu, sigma^2): Phi(x) below the mean and
// 1 - Phi(x) above it, x = (a - mu) / sigma. Always in [0, 0.5].
// Throws DomainError unless sigma > 0.
double calibration_weight(double a, double mu, double sigma, CdfMode mode = CdfMode::exact);

// a * calibration_weight(a, mu, sigma).
double calibration_value(double a, double mu, double sigma, CdfMode mode = CdfMode::exact);

struct CalibrationPartials {
  double value;
  double d_a;
  double d_mu;
  double d_sigma;
};

// Value and partial derivatives of calibration_value. At a == mu the a <= mu
// branch is used.
CalibrationPartials calibration_value_partials(double a, double mu, double sigma, CdfMode mode = CdfMode::exact);

// Value and partial derivatives of calibration_weight.
CalibrationPartials calibration_weight_partials(double a, double mu, double sigma, CdfMode mode = CdfMode::exact);

// Gaussian calibration linear unit: relu(a) + calibration_value(a, 0, 1).
double gclu(double a, CdfMode mode = CdfMode::exact);

// Uses the a <= 0 branch at the kink, so gclu_derivative(0) == 0.5.
double gclu_derivative(double a, CdfMode mode = CdfMode::exact);

// Elementwise gclu with taped gradient.
Tensor gclu(const Tensor& x, CdfMode mode);

// Applies calibration_value elementwise to features [N,C,...] with per-sample,
// per-channel parameters mu and sigma of shape [N,C]. Differentiable in all
// three inputs.
Tensor calibration_map(const Tensor& features, const Tensor& mu, const Tensor& sigma, CdfMode mode);

// Same layout as calibration_map but emits the weights themselves.
Tensor calibration_weights(const Tensor& features, const Tensor& mu, const Tensor& sigma, CdfMode mode);

}  // namespace rescal
