#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rescal/tensor.hpp"

namespace rescal {

// Elementwise ops require identical shapes; no broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
// std::erf forward (glibc, within a few ulp); backward uses (2/sqrt(pi)) exp(-x^2).
Tensor erf(const Tensor& x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation with zero padding: input [N,Cin,H,W], weight [Cout,Cin,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt,
              Conv2dOptions options = {});

enum class NormMode { train, eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization over (N,H,W). Train mode uses batch statistics and
// updates `state` (unbiased variance for the running estimate); eval mode reads
// `state` only.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  NormMode mode);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);

// [N,Cin] x [Cout,Cin]^T + [Cout]
Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Mean softmax cross-entropy of logits [N,K] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace rescal
