// Reference kernels: straightforward loops, no blocking, no threads.

#include <algorithm>
#include <cmath>

#include "citnet/kernels.hpp"
#include "corner.hpp"

namespace citnet::kernels::serial {

template <typename T>
void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t i = 0; i < g.kernel_h; ++i) {
      for (std::int64_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            const bool inside = y >= 0 && y < g.height && xx >= 0 && xx < g.width;
            row[oy * g.out_w + ox] = inside ? x[(c * g.height + y) * g.width + xx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* x_grad) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    for (std::int64_t i = 0; i < g.kernel_h; ++i) {
      for (std::int64_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t y = oy * g.stride - g.padding + i;
          if (y < 0 || y >= g.height) continue;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t xx = ox * g.stride - g.padding + j;
            if (xx < 0 || xx >= g.width) continue;
            x_grad[(c * g.height + y) * g.width + xx] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void bilinear_forward(std::int64_t channels, std::int64_t height, std::int64_t width,
                      std::int64_t points, const T* x, const T* ys, const T* xs, T* out) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* img = x + c * height * width;
    for (std::int64_t p = 0; p < points; ++p) {
      const auto cn = detail::corners(ys[p], xs[p], height, width);
      T v = 0;
      for (int q = 0; q < 4; ++q) v += cn.weight[q] * img[cn.index[q]];
      out[c * points + p] = v;
    }
  }
}

template <typename T>
void bilinear_backward(std::int64_t channels, std::int64_t height, std::int64_t width,
                       std::int64_t points, const T* x, const T* ys, const T* xs,
                       const T* grad_out, T* grad_x, T* grad_ys, T* grad_xs) {
  for (std::int64_t p = 0; p < points; ++p) {
    const auto cn = detail::corners(ys[p], xs[p], height, width);
    T gy = 0, gx = 0;
    for (std::int64_t c = 0; c < channels; ++c) {
      const T g = grad_out[c * points + p];
      const T* img = x + c * height * width;
      if (grad_x) {
        T* gimg = grad_x + c * height * width;
        for (int q = 0; q < 4; ++q) gimg[cn.index[q]] += cn.weight[q] * g;
      }
      const T v00 = cn.value(img, 0), v01 = cn.value(img, 1);
      const T v10 = cn.value(img, 2), v11 = cn.value(img, 3);
      gy += g * ((1 - cn.lx) * (v10 - v00) + cn.lx * (v11 - v01));
      gx += g * ((1 - cn.ly) * (v01 - v00) + cn.ly * (v11 - v10));
    }
    if (grad_ys) grad_ys[p] += gy;
    if (grad_xs) grad_xs[p] += gx;
  }
}

template <typename T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
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
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
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
}

template <typename T>
void softmax_backward(std::int64_t outer, std::int64_t len, std::int64_t inner, const T* y,
                      const T* grad_y, T* grad_x) {
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      T dot = 0;
      for (std::int64_t l = 0; l < len; ++l) dot += y[base + l * inner] * grad_y[base + l * inner];
      for (std::int64_t l = 0; l < len; ++l) {
        grad_x[base + l * inner] += y[base + l * inner] * (grad_y[base + l * inner] - dot);
      }
    }
  }
}

#define CITNET_SERIAL_INSTANTIATE(T)                                                           \
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

CITNET_SERIAL_INSTANTIATE(float)
CITNET_SERIAL_INSTANTIATE(double)

}  // namespace citnet::kernels::serial
