#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rescal/calib_math.hpp"
#include "rescal/params.hpp"
#include "rescal/tensor.hpp"

namespace rescal {

enum class RcVariant { two_fc, three_fc };
enum class MidActivation { none, relu, sigmoid };

std::string_view rc_variant_name(RcVariant v);
RcVariant parse_rc_variant(std::string_view text);  // "2"/"two_fc", "3"/"three_fc"
std::string_view mid_activation_name(MidActivation a);
MidActivation parse_mid_activation(std::string_view text);

inline constexpr double kSigmaFloor = 1e-4;

struct RcLayerConfig {
  std::size_t channels = 16;
  RcVariant variant = RcVariant::three_fc;
  std::size_t reduction = 4;  // three_fc only
  MidActivation mid_activation = MidActivation::none;
  CdfMode cdf_mode = CdfMode::exact;
  std::uint64_t seed = 0;
};

// Width of the shared reduce layer: channels / reduction, at least 1.
std::size_t rc_hidden_width(const RcLayerConfig& config);

// Exact parameter count including biases:
//   two_fc   2C^2 + 2C
//   three_fc 3Ch + h + 2C,  h = rc_hidden_width
std::size_t rc_param_count(const RcLayerConfig& config);

// Per-sample, per-channel Gaussian parameters, both [N,C]; sigma >= kSigmaFloor.
struct ChannelGaussianParams {
  Tensor mu;
  Tensor sigma;
};

// Response calibration layer. A pooled channel descriptor drives an MLP whose
// two heads predict mu and sigma per channel; the output is the elementwise
// calibration map a * w(a; mu, sigma), which the caller adds to the features.
//
// Heads start at zero with the sigma-head bias at softplus^-1(1), so a fresh
// layer predicts mu = 0 and sigma = 1 + kSigmaFloor for any input.
class RcLayer {
 public:
  // Throws ConfigError when channels or reduction is zero.
  explicit RcLayer(RcLayerConfig config);

  const RcLayerConfig& config() const { return config_; }
  std::size_t hidden_width() const { return hidden_; }

  ChannelGaussianParams predict_params(const Tensor& features) const;
  Tensor forward(const Tensor& features) const;

  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) const;
  std::size_t param_count() const;

  // Present only for three_fc.
  const Tensor& reduce_weight() const { return reduce_w_; }
  const Tensor& reduce_bias() const { return reduce_b_; }
  const Tensor& mean_weight() const { return mean_w_; }
  const Tensor& mean_bias() const { return mean_b_; }
  const Tensor& std_weight() const { return std_w_; }
  const Tensor& std_bias() const { return std_b_; }

 private:
  RcLayerConfig config_;
  std::size_t hidden_ = 0;
  Tensor reduce_w_, reduce_b_;
  Tensor mean_w_, mean_b_;
  Tensor std_w_, std_b_;
};

}  // namespace rescal
