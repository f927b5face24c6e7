#include <algorithm>
#include <cmath>

#include "sfl/kernels.hpp"

namespace sfl::kernels::omp {

using Index = std::ptrdiff_t;

void dense_forward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                   std::span<const float> b, std::span<float> y) {
  const Index rows = static_cast<Index>(d.batch * d.out);
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const std::size_t n = static_cast<std::size_t>(r) / d.out;
    const std::size_t o = static_cast<std::size_t>(r) % d.out;
    const float* xr = x.data() + n * d.in;
    const float* wr = w.data() + o * d.in;
    float acc = 0.0f;
    for (std::size_t i = 0; i < d.in; ++i) acc += xr[i] * wr[i];
    y[static_cast<std::size_t>(r)] = acc + b[o];
  }
}

void dense_backward(const DenseDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                    std::span<float> gx) {
  const Index outs = static_cast<Index>(d.out);
#pragma omp parallel for schedule(static)
  for (Index oi = 0; oi < outs; ++oi) {
    const std::size_t o = static_cast<std::size_t>(oi);
    float* gwr = gw.data() + o * d.in;
    for (std::size_t i = 0; i < d.in; ++i) {
      float acc = 0.0f;
      for (std::size_t n = 0; n < d.batch; ++n) acc += gy[n * d.out + o] * x[n * d.in + i];
      gwr[i] = acc;
    }
    float acc = 0.0f;
    for (std::size_t n = 0; n < d.batch; ++n) acc += gy[n * d.out + o];
    gb[o] = acc;
  }
  if (gx.empty()) return;
  const Index cells = static_cast<Index>(d.batch * d.in);
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < cells; ++c) {
    const std::size_t n = static_cast<std::size_t>(c) / d.in;
    const std::size_t i = static_cast<std::size_t>(c) % d.in;
    const float* gyr = gy.data() + n * d.out;
    float acc = 0.0f;
    for (std::size_t o = 0; o < d.out; ++o) acc += gyr[o] * w[o * d.in + i];
    gx[static_cast<std::size_t>(c)] = acc;
  }
}

void conv2d_forward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> b, std::span<float> y) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  const Index planes = static_cast<Index>(d.batch * d.out_ch);
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / d.out_ch;
    const std::size_t o = static_cast<std::size_t>(pl) % d.out_ch;
    float* yp = y.data() + static_cast<std::size_t>(pl) * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < d.in_ch; ++c) {
          const float* xp = x.data() + (n * d.in_ch + c) * d.height * d.width;
          const float* wp = w.data() + (o * d.in_ch + c) * k * k;
          for (std::size_t u = 0; u < k; ++u) {
            const float* xr = xp + (i + u) * d.width + j;
            for (std::size_t v = 0; v < k; ++v) acc += xr[v] * wp[u * k + v];
          }
        }
        yp[i * ow + j] = acc + b[o];
      }
    }
  }
}

void conv2d_backward(const ConvDims& d, std::span<const float> x, std::span<const float> w,
                     std::span<const float> gy, std::span<float> gw, std::span<float> gb,
                     std::span<float> gx) {
  const std::size_t oh = d.out_h(), ow = d.out_w(), k = d.kernel;
  const Index pairs = static_cast<Index>(d.out_ch * d.in_ch);
#pragma omp parallel for schedule(static)
  for (Index pr = 0; pr < pairs; ++pr) {
    const std::size_t o = static_cast<std::size_t>(pr) / d.in_ch;
    const std::size_t c = static_cast<std::size_t>(pr) % d.in_ch;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        float acc = 0.0f;
        for (std::size_t n = 0; n < d.batch; ++n) {
          const float* gyp = gy.data() + (n * d.out_ch + o) * oh * ow;
          const float* xp = x.data() + (n * d.in_ch + c) * d.height * d.width;
          for (std::size_t i = 0; i < oh; ++i) {
            const float* xr = xp + (i + u) * d.width + v;
            for (std::size_t j = 0; j < ow; ++j) acc += gyp[i * ow + j] * xr[j];
          }
        }
        gw[((o * d.in_ch + c) * k + u) * k + v] = acc;
      }
    }
  }
  const Index outs = static_cast<Index>(d.out_ch);
#pragma omp parallel for schedule(static)
  for (Index oi = 0; oi < outs; ++oi) {
    const std::size_t o = static_cast<std::size_t>(oi);
    float acc = 0.0f;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const float* gyp = gy.data() + (n * d.out_ch + o) * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) acc += gyp[i];
    }
    gb[o] = acc;
  }
  if (gx.empty()) return;
  const Index planes = static_cast<Index>(d.batch * d.in_ch);
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const std::size_t n = static_cast<std::size_t>(pl) / d.in_ch;
    const std::size_t c = static_cast<std::size_t>(pl) % d.in_ch;
    float* gxp = gx.data() + static_cast<std::size_t>(pl) * d.height * d.width;
    for (std::size_t h = 0; h < d.height; ++h) {
      for (std::size_t q = 0; q < d.width; ++q) {
        float acc = 0.0f;
        for (std::size_t o = 0; o < d.out_ch; ++o) {
          const float* gyp = gy.data() + (n * d.out_ch + o) * oh * ow;
          const float* wp = w.data() + (o * d.in_ch + c) * k * k;
          const std::size_t u_lo = h >= oh ? h - oh + 1 : 0;
          const std::size_t u_hi = std::min(k, h + 1);
          const std::size_t v_lo = q >= ow ? q - ow + 1 : 0;
          const std::size_t v_hi = std::min(k, q + 1);
          for (std::size_t u = u_lo; u < u_hi; ++u) {
            for (std::size_t v = v_lo; v < v_hi; ++v) {
              acc += gyp[(h - u) * ow + q - v] * wp[u * k + v];
            }
          }
        }
        gxp[h * d.width + q] = acc;
      }
    }
  }
}

void maxpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y,
                     std::span<uint32_t> argmax) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  const Index planes = static_cast<Index>(d.batch * d.channels);
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const std::size_t p = static_cast<std::size_t>(pl);
    const std::size_t in_base = p * d.height * d.width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t origin = in_base + i * d.stride * d.width + j * d.stride;
        std::size_t best = origin;
        float best_v = x[origin];
        for (std::size_t u = 0; u < d.kernel; ++u) {
          const std::size_t row = origin + u * d.width;
          for (std::size_t v = 0; v < d.kernel; ++v) {
            if (x[row + v] > best_v) {
              best_v = x[row + v];
              best = row + v;
            }
          }
        }
        const std::size_t out = (p * oh + i) * ow + j;
        y[out] = best_v;
        argmax[out] = static_cast<uint32_t>(best);
      }
    }
  }
}

void maxpool_backward(const PoolDims& d, std::span<const float> gy,
                      std::span<const uint32_t> argmax, std::span<float> gx) {
  const std::size_t per_out = d.out_h() * d.out_w();
  const std::size_t per_in = d.height * d.width;
  const Index planes = static_cast<Index>(d.batch * d.channels);
  // Windows never cross planes, so each plane is scattered by one thread.
#pragma omp parallel for schedule(static)
  for (Index pl = 0; pl < planes; ++pl) {
    const std::size_t p = static_cast<std::size_t>(pl);
    std::fill_n(gx.data() + p * per_in, per_in, 0.0f);
    for (std::size_t o = p * per_out; o < (p + 1) * per_out; ++o) gx[argmax[o]] += gy[o];
  }
}

void pairwise_distances(std::size_t n, std::size_t p, std::span<const double> x,
                        std::span<double> out) {
  const Index rows = static_cast<Index>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (Index ri = 0; ri < rows; ++ri) {
    const std::size_t i = static_cast<std::size_t>(ri);
    const double* xi = x.data() + i * p;
    for (std::size_t j = 0; j < n; ++j) {
      const double* xj = x.data() + j * p;
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) {
        const double diff = xi[k] - xj[k];
        acc += diff * diff;
      }
      out[i * n + j] = std::sqrt(acc);
    }
  }
}

}  // namespace sfl::kernels::omp
