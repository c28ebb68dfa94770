#include "rescal/rc_layer.hpp"

#include <cmath>
#include <numbers>

#include "rescal/errors.hpp"
#include "rescal/ops.hpp"
#include "rescal/random.hpp"

namespace rescal {

std::string_view rc_variant_name(RcVariant v) { return v == RcVariant::two_fc ? "two_fc" : "three_fc"; }

RcVariant parse_rc_variant(std::string_view text) {
  if (text == "2" || text == "two_fc") return RcVariant::two_fc;
  if (text == "3" || text == "three_fc") return RcVariant::three_fc;
  throw ConfigError("unknown rc variant '" + std::string(text) + "' (expected two_fc|three_fc)");
}

std::string_view mid_activation_name(MidActivation a) {
  switch (a) {
    case MidActivation::none:
      return "none";
    case MidActivation::relu:
      return "relu";
    case MidActivation::sigmoid:
      return "sigmoid";
  }
  return "none";
}

MidActivation parse_mid_activation(std::string_view text) {
  if (text == "none") return MidActivation::none;
  if (text == "relu") return MidActivation::relu;
  if (text == "sigmoid") return MidActivation::sigmoid;
  throw ConfigError("unknown mid activation '" + std::string(text) + "' (expected none|relu|sigmoid)");
}

std::size_t rc_hidden_width(const RcLayerConfig& config) {
  if (config.reduction == 0) return 0;
  return std::max<std::size_t>(1, config.channels / config.reduction);
}

std::size_t rc_param_count(const RcLayerConfig& config) {
  const std::size_t c = config.channels;
  if (config.variant == RcVariant::two_fc) return 2 * c * c + 2 * c;
  const std::size_t h = rc_hidden_width(config);
  return 3 * c * h + h + 2 * c;
}

namespace {
// softplus(ln(e - 1)) == 1
const double kUnitSoftplusBias = std::log(std::numbers::e - 1.0);
}  // namespace

RcLayer::RcLayer(RcLayerConfig config) : config_(config) {
  if (config_.channels == 0) throw ConfigError("rc layer needs at least one channel");
  if (config_.reduction == 0) throw ConfigError("rc layer reduction must be positive");
  const std::size_t c = config_.channels;
  std::size_t head_in = c;
  if (config_.variant == RcVariant::three_fc) {
    hidden_ = rc_hidden_width(config_);
    head_in = hidden_;
    Rng rng(config_.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    std::vector<double> w(hidden_ * c), b(hidden_);
    for (double& v : w) v = rng.uniform(-bound, bound);
    for (double& v : b) v = rng.uniform(-bound, bound);
    reduce_w_ = Tensor::create({hidden_, c}, std::move(w));
    reduce_b_ = Tensor::create({hidden_}, std::move(b));
  }
  mean_w_ = Tensor::zeros({c, head_in});
  mean_b_ = Tensor::zeros({c});
  std_w_ = Tensor::zeros({c, head_in});
  std_b_ = Tensor::full({c}, kUnitSoftplusBias);
}

ChannelGaussianParams RcLayer::predict_params(const Tensor& features) const {
  if (features.rank() != 4 || features.dim(1) != config_.channels) {
    throw ShapeError("rc layer expects [N," + std::to_string(config_.channels) + ",H,W], got " +
                     shape_string(features.shape()));
  }
  Tensor h = global_avg_pool(features);
  if (config_.variant == RcVariant::three_fc) {
    h = fully_connected(h, reduce_w_, reduce_b_);
    if (config_.mid_activation == MidActivation::relu) h = relu(h);
    if (config_.mid_activation == MidActivation::sigmoid) h = sigmoid(h);
  }
  Tensor mu = fully_connected(h, mean_w_, mean_b_);
  Tensor raw = fully_connected(h, std_w_, std_b_);
  Tensor sp = softplus(raw);
  Tensor sigma = add(sp, Tensor::full(sp.shape(), kSigmaFloor));
  return {mu, sigma};
}

Tensor RcLayer::forward(const Tensor& features) const {
  auto params = predict_params(features);
  return calibration_map(features, params.mu, params.sigma, config_.cdf_mode);
}

void RcLayer::collect_params(const std::string& prefix, std::vector<NamedParam>& out) const {
  if (config_.variant == RcVariant::three_fc) {
    out.push_back({prefix + "reduce.weight", reduce_w_, true});
    out.push_back({prefix + "reduce.bias", reduce_b_, false});
  }
  out.push_back({prefix + "mean.weight", mean_w_, true});
  out.push_back({prefix + "mean.bias", mean_b_, false});
  out.push_back({prefix + "std.weight", std_w_, true});
  out.push_back({prefix + "std.bias", std_b_, false});
}

std::size_t RcLayer::param_count() const {
  std::vector<NamedParam> params;
  collect_params("", params);
  return total_size(params);
}

}  // namespace rescal
