#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sfl/tensor.hpp"

namespace sfl {

struct LossResult {
  double loss = 0.0;     // mean over the batch
  Tensor grad;           // d loss / d logits, same shape as logits
  std::size_t correct = 0;
};

// Softmax cross-entropy, mean-reduced over the batch. Softmax and the loss are
// evaluated in binary64; the gradient is rounded to binary32.
LossResult cross_entropy_loss(const Tensor& logits, std::span<const uint32_t> labels);

// Row-wise argmax of a [batch, classes] tensor; ties resolve to the lower index.
std::vector<uint32_t> argmax_rows(const Tensor& logits);

}  // namespace sfl
