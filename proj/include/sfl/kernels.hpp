#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

// Numeric kernels behind the layer stack. Two implementations share one
// contract: `serial` is the straightforward reference, `omp` parallelizes the
// outer loops with OpenMP. Each output element is accumulated by exactly one
// thread in ascending index order, so both produce bit-identical results.
namespace sfl::kernels {

struct DenseDims {
  std::size_t batch, in, out;
};

struct ConvDims {
  std::size_t batch, in_ch, height, width, out_ch, kernel;
  std::size_t out_h() const { return height - kernel + 1; }
  std::size_t out_w() const { return width - kernel + 1; }
};

struct PoolDims {
  std::size_t batch, channels, height, width, kernel, stride;
  std::size_t out_h() const { return (height - kernel) / stride + 1; }
  std::size_t out_w() const { return (width - kernel) / stride + 1; }
};

namespace serial {
#include "sfl/kernel_decls.inc"
}  // namespace serial

namespace omp {
#include "sfl/kernel_decls.inc"
}  // namespace omp

// Implementation used by the layer stack. Defaults to omp.
enum class Backend { kSerial, kOmp };
void set_backend(Backend backend);
Backend backend();

void dense_forward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                   std::span<const float> b, std::span<float> y);
void dense_backward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                    std::span<float> gx);
void conv2d_forward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> b, std::span<float> y);
void conv2d_backward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                     std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                     std::span<float> gx);
void maxpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y,
                     std::span<uint32_t> argmax);
void maxpool_backward(const PoolDims& d, std::span<const float> gy,
                      std::span<const uint32_t> argmax, std::span<float> gx);
void pairwise_distances(std::size_t n, std::size_t p, std::span<const double> x,
                        std::span<double> out);

}  // namespace sfl::kernels
