// OpenMP kernels. Work is split over independent output slices (row blocks,
// channels, sample points) so every output element has a single writer and a
// fixed summation order.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "citnet/kernels.hpp"
#include "corner.hpp"

namespace citnet::kernels::parallel {

namespace {

constexpr std::int64_t kParallelWork = 1 << 15;
constexpr std::int64_t kMr = 6;
constexpr std::int64_t kKc = 256;

template <typename T>
constexpr std::int64_t nr() {
  return 128 / static_cast<std::int64_t>(sizeof(T));  // two 512-bit vectors
}

template <typename T>
using Vec [[gnu::vector_size(64)]] = T;

// C[kMr x NR] (+)= Ap[kc x kMr]^T * Bp[kc x NR]; the 6 x 2 vector accumulators
// stay in registers. Edge tiles go through a local buffer.
template <typename T, std::int64_t NR>
inline void micro_kernel(std::int64_t kc, const T* ap, const T* bp, T* c, std::int64_t ldc,
                         std::int64_t rows, std::int64_t cols, bool accumulate) {
  using V = Vec<T>;
  constexpr std::int64_t W = 64 / sizeof(T);
  static_assert(NR == 2 * W);
  V acc[kMr][2] = {};
  for (std::int64_t p = 0; p < kc; ++p) {
    V b0, b1;
    __builtin_memcpy(&b0, bp + p * NR, sizeof(V));
    __builtin_memcpy(&b1, bp + p * NR + W, sizeof(V));
    const T* acol = ap + p * kMr;
#pragma GCC unroll 6
    for (std::int64_t i = 0; i < kMr; ++i) {
      const T av = acol[i];
      acc[i][0] += av * b0;
      acc[i][1] += av * b1;
    }
  }
  if (rows == kMr && cols == NR) {
    for (std::int64_t i = 0; i < kMr; ++i) {
      T* crow = c + i * ldc;
      for (int h = 0; h < 2; ++h) {
        V out = acc[i][h];
        if (accumulate) {
          V prev;
          __builtin_memcpy(&prev, crow + h * W, sizeof(V));
          out += prev;
        }
        __builtin_memcpy(crow + h * W, &out, sizeof(V));
      }
    }
    return;
  }
  alignas(64) T tile[kMr][NR];
  __builtin_memcpy(tile, acc, sizeof(tile));
  for (std::int64_t i = 0; i < rows; ++i) {
    T* crow = c + i * ldc;
    if (accumulate) {
      for (std::int64_t j = 0; j < cols; ++j) crow[j] += tile[i][j];
    } else {
      for (std::int64_t j = 0; j < cols; ++j) crow[j] = tile[i][j];
    }
  }
}

template <typename T>
void gemm_small(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
                bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  constexpr std::int64_t NR = nr<T>();
  if (m * n * k < kParallelWork || m < kMr || n < NR) {
    gemm_small(m, n, k, a, b, c, accumulate);
    return;
  }
  const std::int64_t panels = (n + NR - 1) / NR;
  const std::int64_t row_blocks = (m + kMr - 1) / kMr;

  // B packed as [panel][k][NR], zero padded on the right edge.
  std::vector<T> bp(static_cast<std::size_t>(panels * k * NR), T(0));
#pragma omp parallel for schedule(static)
  for (std::int64_t jp = 0; jp < panels; ++jp) {
    const std::int64_t j0 = jp * NR;
    const std::int64_t cols = std::min(NR, n - j0);
    T* dst = bp.data() + jp * k * NR;
    for (std::int64_t p = 0; p < k; ++p) {
      std::copy(b + p * n + j0, b + p * n + j0 + cols, dst + p * NR);
    }
  }

  // A packed as [row_block][k][kMr], zero padded at the bottom edge.
  std::vector<T> ap(static_cast<std::size_t>(row_blocks * k * kMr), T(0));
#pragma omp parallel for schedule(static)
  for (std::int64_t rb = 0; rb < row_blocks; ++rb) {
    const std::int64_t i0 = rb * kMr;
    const std::int64_t rows = std::min(kMr, m - i0);
    T* dst = ap.data() + rb * k * kMr;
    for (std::int64_t i = 0; i < rows; ++i) {
      const T* src = a + (i0 + i) * k;
      for (std::int64_t p = 0; p < k; ++p) dst[p * kMr + i] = src[p];
    }
  }

  for (std::int64_t pc = 0; pc < k; pc += kKc) {
    const std::int64_t kc = std::min(kKc, k - pc);
    const bool acc = accumulate || pc > 0;
#pragma omp parallel for schedule(static)
    for (std::int64_t rb = 0; rb < row_blocks; ++rb) {
      const std::int64_t i0 = rb * kMr;
      const std::int64_t rows = std::min(kMr, m - i0);
      const T* apanel = ap.data() + (rb * k + pc) * kMr;
      for (std::int64_t jp = 0; jp < panels; ++jp) {
        const std::int64_t j0 = jp * NR;
        micro_kernel<T, NR>(kc, apanel, bp.data() + (jp * k + pc) * NR, c + i0 * n + j0, n, rows,
                            std::min(NR, n - j0), acc);
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::int64_t plane = g.out_h * g.out_w;
#pragma omp parallel for schedule(static) if (g.channels * plane > kParallelWork)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t i = 0; i < g.kernel_h; ++i) {
      for (std::int64_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          T* out = row + oy * g.out_w;
          if (y < 0 || y >= g.height) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.height + y) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            out[ox] = (xx >= 0 && xx < g.width) ? src[xx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x_grad) {
  const std::int64_t plane = g.out_h * g.out_w;
#pragma omp parallel for schedule(static) if (g.channels * plane > kParallelWork)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t i = 0; i < g.kernel_h; ++i) {
      for (std::int64_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          if (y < 0 || y >= g.height) continue;
          T* dst = x_grad + (c * g.height + y) * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            if (xx >= 0 && xx < g.width) dst[xx] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

namespace {
template <typename T>
std::vector<detail::Corners<T>> corner_table(std::int64_t height, std::int64_t width,
                                             std::int64_t points, const T* ys, const T* xs) {
  std::vector<detail::Corners<T>> table(static_cast<std::size_t>(points));
#pragma omp parallel for schedule(static) if (points > kParallelWork / 8)
  for (std::int64_t p = 0; p < points; ++p) table[p] = detail::corners(ys[p], xs[p], height, width);
  return table;
}
}  // namespace

template <typename T>
void bilinear_forward(std::int64_t channels, std::int64_t height, std::int64_t width,
                      std::int64_t points, const T* x, const T* ys, const T* xs, T* out) {
  const auto table = corner_table(height, width, points, ys, xs);
#pragma omp parallel for schedule(static) if (channels * points > kParallelWork)
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* img = x + c * height * width;
    T* dst = out + c * points;
    for (std::int64_t p = 0; p < points; ++p) {
      const auto& cn = table[p];
      T v = 0;
      for (int q = 0; q < 4; ++q) v += cn.weight[q] * img[cn.index[q]];
      dst[p] = v;
    }
  }
}

template <typename T>
void bilinear_backward(std::int64_t channels, std::int64_t height, std::int64_t width,
                       std::int64_t points, const T* x, const T* ys, const T* xs,
                       const T* grad_out, T* grad_x, T* grad_ys, T* grad_xs) {
  const auto table = corner_table(height, width, points, ys, xs);
  const bool big = channels * points > kParallelWork;
  if (grad_x) {
#pragma omp parallel for schedule(static) if (big)
    for (std::int64_t c = 0; c < channels; ++c) {
      T* gimg = grad_x + c * height * width;
      const T* g = grad_out + c * points;
      for (std::int64_t p = 0; p < points; ++p) {
        const auto& cn = table[p];
        for (int q = 0; q < 4; ++q) gimg[cn.index[q]] += cn.weight[q] * g[p];
      }
    }
  }
  if (grad_ys || grad_xs) {
#pragma omp parallel for schedule(static) if (big)
    for (std::int64_t p = 0; p < points; ++p) {
      const auto& cn = table[p];
      T gy = 0, gx = 0;
      for (std::int64_t c = 0; c < channels; ++c) {
        const T g = grad_out[c * points + p];
        const T* img = x + c * height * width;
        const T v00 = cn.value(img, 0), v01 = cn.value(img, 1);
        const T v10 = cn.value(img, 2), v11 = cn.value(img, 3);
        gy += g * ((1 - cn.lx) * (v10 - v00) + cn.lx * (v11 - v01));
        gx += g * ((1 - cn.ly) * (v01 - v00) + cn.ly * (v11 - v10));
      }
      if (grad_ys) grad_ys[p] += gy;
      if (grad_xs) grad_xs[p] += gx;
    }
  }
}

template <typename T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
#pragma omp parallel for schedule(static) if (g.channels * g.out_h * g.out_w > kParallelWork)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* img = x + c * g.height * g.width;
    const T* ker = w + c * g.kernel_h * g.kernel_w;
    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        T acc = 0;
        for (std::int64_t i = 0; i < g.kernel_h; ++i) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          if (y < 0 || y >= g.height) continue;
          for (std::int64_t j = 0; j < g.kernel_w; ++j) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            if (xx < 0 || xx >= g.width) continue;
            acc += ker[i * g.kernel_w + j] * img[y * g.width + xx];
          }
        }
        out[(c * g.out_h + oy) * g.out_w + ox] = acc;
      }
    }
  }
}

template <typename T>
void depthwise_backward(const ConvGeometry& g, const T* x, const T* w, const T* grad_out,
                        T* grad_x, T* grad_w) {
#pragma omp parallel for schedule(static) if (g.channels * g.out_h * g.out_w > kParallelWork)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* img = x + c * g.height * g.width;
    const T* ker = w + c * g.kernel_h * g.kernel_w;
    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        const T go = grad_out[(c * g.out_h + oy) * g.out_w + ox];
        for (std::int64_t i = 0; i < g.kernel_h; ++i) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          if (y < 0 || y >= g.height) continue;
          for (std::int64_t j = 0; j < g.kernel_w; ++j) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            if (xx < 0 || xx >= g.width) continue;
            if (grad_x) grad_x[(c * g.height + y) * g.width + xx] += ker[i * g.kernel_w + j] * go;
            if (grad_w) grad_w[(c * g.kernel_h + i) * g.kernel_w + j] += img[y * g.width + xx] * go;
          }
        }
      }
    }
  }
}

template <typename T>
void softmax_forward(std::int64_t outer, std::int64_t len, std::int64_t inner, const T* x, T* y) {
  const std::int64_t rows = outer * inner;
#pragma omp parallel for schedule(static) if (rows * len > kParallelWork)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t o = r / inner, in = r % inner;
    const T* src = x + o * len * inner + in;
    T* dst = y + o * len * inner + in;
    T mx = src[0];
    for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, src[l * inner]);
    T total = 0;
    for (std::int64_t l = 0; l < len; ++l) {
      dst[l * inner] = std::exp(src[l * inner] - mx);
      total += dst[l * inner];
    }
    for (std::int64_t l = 0; l < len; ++l) dst[l * inner] /= total;
  }
}

template <typename T>
void softmax_backward(std::int64_t outer, std::int64_t len, std::int64_t inner, const T* y,
                      const T* grad_y, T* grad_x) {
  const std::int64_t rows = outer * inner;
#pragma omp parallel for schedule(static) if (rows * len > kParallelWork)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t o = r / inner, in = r % inner;
    const std::int64_t base = o * len * inner + in;
    T dot = 0;
    for (std::int64_t l = 0; l < len; ++l) dot += y[base + l * inner] * grad_y[base + l * inner];
    for (std::int64_t l = 0; l < len; ++l) {
      grad_x[base + l * inner] += y[base + l * inner] * (grad_y[base + l * inner] - dot);
    }
  }
}

#define CITNET_PARALLEL_INSTANTIATE(T)                                                         \
  template void gemm<T>(std::int64_t, std::int64_t, std::int64_t, const T*, const T*, T*,      \
                        bool);                                                                 \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                  \
  template void col2im<T>(const ConvGeometry&, const T*, T*);                                  \
  template void bilinear_forward<T>(std::int64_t, std::int64_t, std::int64_t, std::int64_t,    \
                                    const T*, const T*, const T*, T*);                         \
  template void bilinear_backward<T>(std::int64_t, std::int64_t, std::int64_t, std::int64_t,   \
                                     const T*, const T*, const T*, const T*, T*, T*, T*);      \
  template void depthwise_forward<T>(const ConvGeometry&, const T*, const T*, T*);             \
  template void depthwise_backward<T>(const ConvGeometry&, const T*, const T*, const T*, T*,   \
                                      T*);                                                     \
  template void softmax_forward<T>(std::int64_t, std::int64_t, std::int64_t, const T*, T*);    \
  template void softmax_backward<T>(std::int64_t, std::int64_t, std::int64_t, const T*,        \
                                    const T*, T*);

CITNET_PARALLEL_INSTANTIATE(float)
CITNET_PARALLEL_INSTANTIATE(double)

}  // namespace citnet::kernels::parallel
