#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rescal/calib_math.hpp"
#include "rescal/ops.hpp"
#include "rescal/params.hpp"
#include "rescal/random.hpp"
#include "rescal/rc_layer.hpp"

namespace rescal {

enum class Variant { plain, rescnet, gclu_parallel };
enum class Activation { relu, gclu };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);

struct ModelSpec {
  int depth = 32;  // 6n + 2
  int num_classes = 10;
  Variant variant = Variant::plain;
  // Template for every RC layer (rescnet); channels and seed are filled per block.
  RcLayerConfig rc{};
  CdfMode cdf_mode = CdfMode::exact;
};

// Throws ConfigError for depth < 8, (depth - 2) % 6 != 0 or num_classes < 1.
void validate(const ModelSpec& spec);
int blocks_per_stage(const ModelSpec& spec);

inline constexpr std::size_t kStageWidths[3] = {16, 32, 64};

Tensor apply_activation(const Tensor& x, Activation act, CdfMode mode);

// Bias-free convolution followed by batch norm.
struct ConvBn {
  Tensor weight;  // [out, in, k, k]
  Tensor gamma;
  Tensor beta;
  BatchNormState bn;
  Conv2dOptions conv;

  ConvBn() = default;
  ConvBn(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x, NormMode mode);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);
};

// Residual basic block. With an RC layer attached the block computes
//   u = bn2(conv2(act(bn1(conv1(x)))))
//   out = act(u + rc(u) + shortcut(x))
// and without one, act(u + shortcut(x)). The shortcut is identity, or a
// 1x1 strided conv + BN when the shape changes.
class BasicBlock {
 public:
  BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng,
             std::optional<RcLayerConfig> rc = std::nullopt);

  Tensor forward(const Tensor& x, NormMode mode, Activation act, CdfMode cdf_mode, bool calibration_enabled = true);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  bool has_shortcut_conv() const { return shortcut_.has_value(); }
  const std::optional<RcLayer>& rc() const { return rc_; }

  void collect_params(const std::string& prefix, std::vector<NamedParam>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

 private:
  std::size_t in_, out_;
  ConvBn conv1_, conv2_;
  std::optional<ConvBn> shortcut_;
  std::optional<RcLayer> rc_;
};

struct ModelOutput {
  Tensor logits;    // [N, classes]
  Tensor features;  // [N, 64] pooled final-stage responses
};

// CIFAR-style residual network: 3x3 stem (3 -> 16) + BN + activation, three
// stages of basic blocks at widths 16/32/64 (stride 2 entering stages 2 and 3),
// global average pooling and a linear classifier.
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  ModelOutput forward_full(const Tensor& images, NormMode mode);
  Tensor forward(const Tensor& images, NormMode mode) { return forward_full(images, mode).logits; }

  // gclu_parallel uses gclu everywhere; the others use relu. Overridable for
  // ablations.
  Activation activation() const { return activation_; }
  void set_activation(Activation act) { activation_ = act; }

  // When disabled every RC layer contributes an all-zero map.
  bool calibration_enabled() const { return calibration_enabled_; }
  void set_calibration_enabled(bool enabled) { calibration_enabled_ = enabled; }

  std::vector<NamedParam> parameters() const;
  std::vector<NamedBuffer> buffers();
  std::vector<BasicBlock>& blocks() { return blocks_; }

 private:
  ModelSpec spec_;
  std::uint64_t seed_;
  Activation activation_;
  bool calibration_enabled_ = true;
  ConvBn stem_;
  std::vector<BasicBlock> blocks_;
  Tensor fc_w_, fc_b_;
};

// Total scalar parameter count of a built model.
std::size_t count_params(const Model& model);

// Same count computed from a ModelSpec alone, without allocating a model.
std::size_t count_params(const ModelSpec& spec);

}  // namespace rescal
