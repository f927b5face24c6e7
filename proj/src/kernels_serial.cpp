#include <algorithm>
#include <cmath>

#include "sfl/kernels.hpp"

namespace sfl::kernels::serial {

void dense_forward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                   std::span<const float> b, std::span<float> y) {
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out; ++o) {
      float acc = 0.0f;
      for (std::size_t i = 0; i < d.in; ++i) acc += x[n * d.in + i] * w[o * d.in + i];
      y[n * d.out + o] = acc + b[o];
    }
  }
}

void dense_backward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                    std::span<float> gx) {
  for (std::size_t o = 0; o < d.out; ++o) {
    for (std::size_t i = 0; i < d.in; ++i) {
      float acc = 0.0f;
      for (std::size_t n = 0; n < d.batch; ++n) acc += gy[n * d.out + o] * x[n * d.in + i];
      gw[o * d.in + i] = acc;
    }
    float acc = 0.0f;
    for (std::size_t n = 0; n < d.batch; ++n) acc += gy[n * d.out + o];
    gb[o] = acc;
  }
  if (gx.empty()) return;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t i = 0; i < d.in; ++i) {
      float acc = 0.0f;
      for (std::size_t o = 0; o < d.out; ++o) acc += gy[n * d.out + o] * w[o * d.in + i];
      gx[n * d.in + i] = acc;
    }
  }
}

void conv2d_forward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> b, std::span<float> y) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_ch; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          float acc = 0.0f;
          for (std::size_t c = 0; c < d.in_ch; ++c) {
            for (std::size_t u = 0; u < k; ++u) {
              for (std::size_t v = 0; v < k; ++v) {
                acc += x[((n * d.in_ch + c) * d.height + i + u) * d.width + j + v] *
                       w[((o * d.in_ch + c) * k + u) * k + v];
              }
            }
          }
          y[((n * d.out_ch + o) * oh + i) * ow + j] = acc + b[o];
        }
      }
    }
  }
}

void conv2d_backward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                     std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                     std::span<float> gx) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  for (std::size_t o = 0; o < d.out_ch; ++o) {
    for (std::size_t c = 0; c < d.in_ch; ++c) {
      for (std::size_t u = 0; u < k; ++u) {
        for (std::size_t v = 0; v < k; ++v) {
          float acc = 0.0f;
          for (std::size_t n = 0; n < d.batch; ++n) {
            for (std::size_t i = 0; i < oh; ++i) {
              for (std::size_t j = 0; j < ow; ++j) {
                acc += gy[((n * d.out_ch + o) * oh + i) * ow + j] *
                       x[((n * d.in_ch + c) * d.height + i + u) * d.width + j + v];
              }
            }
          }
          gw[((o * d.in_ch + c) * k + u) * k + v] = acc;
        }
      }
    }
    float acc = 0.0f;
    for (std::size_t n = 0; n < d.batch; ++n) {
      for (std::size_t i = 0; i < oh * ow; ++i) acc += gy[(n * d.out_ch + o) * oh * ow + i];
    }
    gb[o] = acc;
  }
  if (gx.empty()) return;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t c = 0; c < d.in_ch; ++c) {
      for (std::size_t h = 0; h < d.height; ++h) {
        for (std::size_t q = 0; q < d.width; ++q) {
          float acc = 0.0f;
          for (std::size_t o = 0; o < d.out_ch; ++o) {
            for (std::size_t u = 0; u < k; ++u) {
              if (h < u || h - u >= oh) continue;
              for (std::size_t v = 0; v < k; ++v) {
                if (q < v || q - v >= ow) continue;
                acc += gy[((n * d.out_ch + o) * oh + h - u) * ow + q - v] *
                       w[((o * d.in_ch + c) * k + u) * k + v];
              }
            }
          }
          gx[((n * d.in_ch + c) * d.height + h) * d.width + q] = acc;
        }
      }
    }
  }
}

void maxpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y,
                     std::span<uint32_t> argmax) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  for (std::size_t p = 0; p < d.batch * d.channels; ++p) {
    const std::size_t in_base = p * d.height * d.width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = in_base + (i * d.stride) * d.width + j * d.stride;
        for (std::size_t u = 0; u < d.kernel; ++u) {
          for (std::size_t v = 0; v < d.kernel; ++v) {
            const std::size_t idx = in_base + (i * d.stride + u) * d.width + j * d.stride + v;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t out = (p * oh + i) * ow + j;
        y[out] = x[best];
        argmax[out] = static_cast<uint32_t>(best);
      }
    }
  }
}

void maxpool_backward(const PoolDims& d, std::span<const float> gy,
                      std::span<const uint32_t> argmax, std::span<float> gx) {
  std::fill(gx.begin(), gx.end(), 0.0f);
  const std::size_t outs = d.batch * d.channels * d.out_h() * d.out_w();
  for (std::size_t o = 0; o < outs; ++o) gx[argmax[o]] += gy[o];
}

void pairwise_distances(std::size_t n, std::size_t p, std::span<const double> x,
                        std::span<double> out) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) {
        const double diff = x[i * p + k] - x[j * p + k];
        acc += diff * diff;
      }
      out[i * n + j] = std::sqrt(acc);
    }
  }
}

}  // namespace sfl::kernels::serial
