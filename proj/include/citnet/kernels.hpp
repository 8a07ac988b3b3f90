#pragma once

// Hot loops behind the tensor ops. Every kernel exists twice: a plain serial
// reference in kernels::serial and an OpenMP version in kernels::parallel.
// Both must agree to rounding; the parallel versions partition work so each
// output element is written by exactly one thread in a fixed order, which
// keeps results independent of the thread count.
//
// All buffers are dense row-major. "accumulate" kernels add into the output.

#include <cstdint>

namespace citnet::kernels {

enum class Backend { Serial, Parallel };

void set_backend(Backend backend);
Backend backend();

/// Worker threads used by the parallel backend (CIT_THREADS caps it in the CLI).
void set_num_threads(int n);
int num_threads();

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride, padding;
  std::int64_t out_h, out_w;
};

#define CITNET_KERNEL_DECLS                                                                       \
  template <typename T>                                                                           \
  void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,         \
            bool accumulate);                                                                     \
  template <typename T>                                                                           \
  void im2col(const ConvGeometry& g, const T* x, T* cols);                                        \
  template <typename T>                                                                           \
  void col2im(const ConvGeometry& g, const T* cols, T* x_grad);                                   \
  template <typename T>                                                                           \
  void bilinear_forward(std::int64_t channels, std::int64_t height, std::int64_t width,           \
                        std::int64_t points, const T* x, const T* ys, const T* xs, T* out);       \
  template <typename T>                                                                           \
  void bilinear_backward(std::int64_t channels, std::int64_t height, std::int64_t width,          \
                         std::int64_t points, const T* x, const T* ys, const T* xs,               \
                         const T* grad_out, T* grad_x, T* grad_ys, T* grad_xs);                   \
  template <typename T>                                                                           \
  void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, T* out);                  \
  template <typename T>                                                                           \
  void depthwise_backward(const ConvGeometry& g, const T* x, const T* w, const T* grad_out,       \
                          T* grad_x, T* grad_w);                                                  \
  template <typename T>                                                                           \
  void softmax_forward(std::int64_t outer, std::int64_t len, std::int64_t inner, const T* x,      \
                       T* y);                                                                     \
  template <typename T>                                                                           \
  void softmax_backward(std::int64_t outer, std::int64_t len, std::int64_t inner, const T* y,     \
                        const T* grad_y, T* grad_x);

namespace serial {
CITNET_KERNEL_DECLS
}
namespace parallel {
CITNET_KERNEL_DECLS
}

// Dispatching entry points used by the ops.
CITNET_KERNEL_DECLS

#undef CITNET_KERNEL_DECLS

}  // namespace citnet::kernels
