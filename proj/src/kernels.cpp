#include "sfl/kernels.hpp"

#include <atomic>

namespace sfl::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::kOmp};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

#define SFL_DISPATCH(fn, ...)                                        \
  (backend() == Backend::kSerial ? serial::fn(__VA_ARGS__) : omp::fn(__VA_ARGS__))

void dense_forward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                   std::span<const float> b, std::span<float> y) {
  SFL_DISPATCH(dense_forward, d, x, w, b, y);
}
void dense_backward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                    std::span<float> gx) {
  SFL_DISPATCH(dense_backward, d, x, w, gy, gw, gb, gx);
}
void conv2d_forward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> b, std::span<float> y) {
  SFL_DISPATCH(conv2d_forward, d, x, w, b, y);
}
void conv2d_backward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                     std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                     std::span<float> gx) {
  SFL_DISPATCH(conv2d_backward, d, x, w, gy, gw, gb, gx);
}
void maxpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y,
                     std::span<uint32_t> argmax) {
  SFL_DISPATCH(maxpool_forward, d, x, y, argmax);
}
void maxpool_backward(const PoolDims& d, std::span<const float> gy,
                      std::span<const uint32_t> argmax, std::span<float> gx) {
  SFL_DISPATCH(maxpool_backward, d, gy, argmax, gx);
}
void pairwise_distances(std::size_t n, std::size_t p, std::span<const double> x,
                        std::span<double> out) {
  SFL_DISPATCH(pairwise_distances, n, p, x, out);
}

#undef SFL_DISPATCH

}  // namespace sfl::kernels
