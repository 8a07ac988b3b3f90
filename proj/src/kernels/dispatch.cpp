#include <omp.h>

#include <atomic>

#include "citnet/kernels.hpp"

namespace citnet::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

void set_num_threads(int n) { omp_set_num_threads(n > 0 ? n : 1); }
int num_threads() { return omp_get_max_threads(); }

#define CITNET_DISPATCH(name, params, args)          \
  template <typename T>                              \
  void name params {                                 \
    if (backend() == Backend::Serial) {              \
      serial::name<T> args;                          \
    } else {                                         \
      parallel::name<T> args;                        \
    }                                                \
  }

CITNET_DISPATCH(gemm,
                (std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
                 bool accumulate),
                (m, n, k, a, b, c, accumulate))
CITNET_DISPATCH(im2col, (const ConvGeometry& g, const T* x, T* cols), (g, x, cols))
CITNET_DISPATCH(col2im, (const ConvGeometry& g, const T* cols, T* x_grad), (g, cols, x_grad))
CITNET_DISPATCH(bilinear_forward,
                (std::int64_t channels, std::int64_t height, std::int64_t width,
                 std::int64_t points, const T* x, const T* ys, const T* xs, T* out),
                (channels, height, width, points, x, ys, xs, out))
CITNET_DISPATCH(bilinear_backward,
                (std::int64_t channels, std::int64_t height, std::int64_t width,
                 std::int64_t points, const T* x, const T* ys, const T* xs, const T* grad_out,
                 T* grad_x, T* grad_ys, T* grad_xs),
                (channels, height, width, points, x, ys, xs, grad_out, grad_x, grad_ys, grad_xs))
CITNET_DISPATCH(depthwise_forward, (const ConvGeometry& g, const T* x, const T* w, T* out),
                (g, x, w, out))
CITNET_DISPATCH(depthwise_backward,
                (const ConvGeometry& g, const T* x, const T* w, const T* grad_out, T* grad_x,
                 T* grad_w),
                (g, x, w, grad_out, grad_x, grad_w))
CITNET_DISPATCH(softmax_forward,
                (std::int64_t outer, std::int64_t len, std::int64_t inner, const T* x, T* y),
                (outer, len, inner, x, y))
CITNET_DISPATCH(softmax_backward,
                (std::int64_t outer, std::int64_t len, std::int64_t inner, const T* y,
                 const T* grad_y, T* grad_x),
                (outer, len, inner, y, grad_y, grad_x))

#define CITNET_DISPATCH_INSTANTIATE(T)                                                         \
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

CITNET_DISPATCH_INSTANTIATE(float)
CITNET_DISPATCH_INSTANTIATE(double)

}  // namespace citnet::kernels
