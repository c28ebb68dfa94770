#pragma once

#include <string>
#include <vector>

#include "rescal/tensor.hpp"

namespace rescal {

// A learned tensor as seen by the optimizer and the checkpoint writer.
struct NamedParam {
  std::string name;
  Tensor tensor;
  bool weight_decay = true;
};

// Non-learned state that still has to survive a checkpoint (BN running stats).
struct NamedBuffer {
  std::string name;
  std::vector<double>* values = nullptr;
};

std::size_t total_size(const std::vector<NamedParam>& params);

}  // namespace rescal
