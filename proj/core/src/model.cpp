#include "rescal/model.hpp"

#include <cmath>

#include "rescal/errors.hpp"

namespace rescal {

std::size_t total_size(const std::vector<NamedParam>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::plain:
      return "plain";
    case Variant::rescnet:
      return "rescnet";
    case Variant::gclu_parallel:
      return "gclu_parallel";
  }
  return "plain";
}

Variant parse_variant(std::string_view text) {
  if (text == "plain") return Variant::plain;
  if (text == "rescnet") return Variant::rescnet;
  if (text == "gclu_parallel") return Variant::gclu_parallel;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected plain|rescnet|gclu_parallel)");
}

void validate(const ModelSpec& spec) {
  if (spec.depth < 8 || (spec.depth - 2) % 6 != 0) {
    throw ConfigError("depth must be 6n+2 with n >= 1, got " + std::to_string(spec.depth));
  }
  if (spec.num_classes < 1) throw ConfigError("num_classes must be positive");
  if (spec.variant == Variant::rescnet && spec.rc.reduction == 0) {
    throw ConfigError("rc reduction must be positive");
  }
}

int blocks_per_stage(const ModelSpec& spec) { return (spec.depth - 2) / 6; }

Tensor apply_activation(const Tensor& x, Activation act, CdfMode mode) {
  return act == Activation::gclu ? gclu(x, mode) : relu(x);
}

ConvBn::ConvBn(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               Rng& rng)
    : bn(out), conv{stride, padding} {
  // fan-out scaled normal (He init, fan_out mode)
  const double stddev = std::sqrt(2.0 / static_cast<double>(out * kernel * kernel));
  std::vector<double> w(out * in * kernel * kernel);
  for (double& v : w) v = rng.normal(0.0, stddev);
  weight = Tensor::create({out, in, kernel, kernel}, std::move(w));
  gamma = Tensor::full({out}, 1.0);
  beta = Tensor::zeros({out});
}

Tensor ConvBn::forward(const Tensor& x, NormMode mode) {
  return batch_norm(conv2d(x, weight, std::nullopt, conv), gamma, beta, bn, mode);
}

void ConvBn::collect_params(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "weight", weight, true});
  out.push_back({prefix + "bn.gamma", gamma, false});
  out.push_back({prefix + "bn.beta", beta, false});
}

void ConvBn::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({prefix + "bn.running_mean", &bn.running_mean});
  out.push_back({prefix + "bn.running_var", &bn.running_var});
}

BasicBlock::BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng,
                       std::optional<RcLayerConfig> rc)
    : in_(in), out_(out), conv1_(in, out, 3, stride, 1, rng), conv2_(out, out, 3, 1, 1, rng) {
  if (stride != 1 || in != out) shortcut_.emplace(in, out, 1, stride, 0, rng);
  if (rc) {
    rc->channels = out;
    rc_.emplace(*rc);
  }
}

Tensor BasicBlock::forward(const Tensor& x, NormMode mode, Activation act, CdfMode cdf_mode,
                           bool calibration_enabled) {
  if (x.rank() != 4 || x.dim(1) != in_) {
    throw ShapeError("basic block expects " + std::to_string(in_) + " input channels, got " +
                     shape_string(x.shape()));
  }
  Tensor h = apply_activation(conv1_.forward(x, mode), act, cdf_mode);
  Tensor u = conv2_.forward(h, mode);
  if (rc_) {
    Tensor calibration = calibration_enabled ? rc_->forward(u) : Tensor::zeros(u.shape());
    u = add(u, calibration);
  }
  Tensor shortcut = shortcut_ ? shortcut_->forward(x, mode) : x;
  return apply_activation(add(u, shortcut), act, cdf_mode);
}

void BasicBlock::collect_params(const std::string& prefix, std::vector<NamedParam>& out) const {
  conv1_.collect_params(prefix + "conv1.", out);
  conv2_.collect_params(prefix + "conv2.", out);
  if (shortcut_) shortcut_->collect_params(prefix + "shortcut.", out);
  if (rc_) rc_->collect_params(prefix + "rc.", out);
}

void BasicBlock::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  conv1_.collect_buffers(prefix + "conv1.", out);
  conv2_.collect_buffers(prefix + "conv2.", out);
  if (shortcut_) shortcut_->collect_buffers(prefix + "shortcut.", out);
}

Model::Model(ModelSpec spec, std::uint64_t seed)
    : spec_(spec),
      seed_(seed),
      activation_(spec.variant == Variant::gclu_parallel ? Activation::gclu : Activation::relu) {
  validate(spec_);
  Rng rng(seed);
  stem_ = ConvBn(3, kStageWidths[0], 3, 1, 1, rng);
  const int n = blocks_per_stage(spec_);
  std::size_t in = kStageWidths[0];
  std::uint64_t block_index = 0;
  for (int stage = 0; stage < 3; ++stage) {
    const std::size_t width = kStageWidths[stage];
    for (int b = 0; b < n; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      std::optional<RcLayerConfig> rc;
      if (spec_.variant == Variant::rescnet) {
        rc = spec_.rc;
        rc->seed = derive_seed(seed, 1000 + block_index);
      }
      blocks_.emplace_back(in, width, stride, rng, rc);
      in = width;
      ++block_index;
    }
  }
  const std::size_t classes = static_cast<std::size_t>(spec_.num_classes);
  const std::size_t fan_in = kStageWidths[2];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(classes * fan_in), b(classes);
  for (double& v : w) v = rng.uniform(-bound, bound);
  for (double& v : b) v = rng.uniform(-bound, bound);
  fc_w_ = Tensor::create({classes, fan_in}, std::move(w));
  fc_b_ = Tensor::create({classes}, std::move(b));
}

ModelOutput Model::forward_full(const Tensor& images, NormMode mode) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw ShapeError("model expects [N,3,H,W] images, got " + shape_string(images.shape()));
  }
  Tensor x = apply_activation(stem_.forward(images, mode), activation_, spec_.cdf_mode);
  for (auto& block : blocks_) x = block.forward(x, mode, activation_, spec_.cdf_mode, calibration_enabled_);
  Tensor pooled = global_avg_pool(x);
  return {fully_connected(pooled, fc_w_, fc_b_), pooled};
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> out;
  stem_.collect_params("stem.", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_params("block" + std::to_string(i) + ".", out);
  }
  out.push_back({"fc.weight", fc_w_, true});
  out.push_back({"fc.bias", fc_b_, false});
  return out;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedBuffer> out;
  stem_.collect_buffers("stem.", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_buffers("block" + std::to_string(i) + ".", out);
  }
  return out;
}

std::size_t count_params(const Model& model) { return total_size(model.parameters()); }

std::size_t count_params(const ModelSpec& spec) {
  validate(spec);
  auto conv_bn = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + 2 * out; };
  std::size_t total = conv_bn(3, kStageWidths[0], 3);
  std::size_t in = kStageWidths[0];
  const int n = blocks_per_stage(spec);
  for (int stage = 0; stage < 3; ++stage) {
    const std::size_t width = kStageWidths[stage];
    for (int b = 0; b < n; ++b) {
      total += conv_bn(in, width, 3) + conv_bn(width, width, 3);
      if (in != width || (stage > 0 && b == 0)) total += conv_bn(in, width, 1);
      if (spec.variant == Variant::rescnet) {
        RcLayerConfig rc = spec.rc;
        rc.channels = width;
        total += rc_param_count(rc);
      }
      in = width;
    }
  }
  const std::size_t classes = static_cast<std::size_t>(spec.num_classes);
  return total + kStageWidths[2] * classes + classes;
}

}  // namespace rescal
