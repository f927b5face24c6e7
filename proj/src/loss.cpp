#include "sfl/loss.hpp"

#include <cmath>

#include "sfl/error.hpp"

namespace sfl {

LossResult cross_entropy_loss(const Tensor& logits, std::span<const uint32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be [batch, classes], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("logits batch " + std::to_string(batch) + " != labels " +
                     std::to_string(labels.size()));
  }
  if (batch == 0) throw ShapeError("empty batch");
  LossResult r;
  r.grad = Tensor(logits.shape());
  std::vector<double> p(classes);
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    const uint32_t y = labels[n];
    if (y >= classes) {
      throw DataError("label " + std::to_string(y) + " out of range for " +
                      std::to_string(classes) + " classes");
    }
    const float* row = logits.ptr() + n * classes;
    double mx = row[0];
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > mx) {
        mx = row[c];
        best = c;
      }
    }
    if (best == y) ++r.correct;
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(static_cast<double>(row[c]) - mx);
      z += p[c];
    }
    total += std::log(z) - (static_cast<double>(row[y]) - mx);
    for (std::size_t c = 0; c < classes; ++c) {
      const double pc = p[c] / z - (c == y ? 1.0 : 0.0);
      r.grad[n * classes + c] = static_cast<float>(pc / static_cast<double>(batch));
    }
  }
  r.loss = total / static_cast<double>(batch);
  if (!std::isfinite(r.loss)) throw NonFiniteError("cross-entropy loss is not finite");
  return r;
}

std::vector<uint32_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects a rank-2 tensor");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<uint32_t> out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* row = logits.ptr() + n * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[n] = static_cast<uint32_t>(best);
  }
  return out;
}

}  // namespace sfl
