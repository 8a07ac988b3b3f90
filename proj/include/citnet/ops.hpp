#pragma once

// Differentiable primitives. Each op computes its result eagerly and, when a
// tape is active and an input requires grad, records its backward rule.
// Image tensors are NCHW; token grids are [B, h, w, C].

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "citnet/tensor.hpp"

namespace citnet {

// Elementwise with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false);

// Layout. reshape accepts one -1. permute and transpose materialize a copy.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int a, int b);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start,
                                       std::int64_t length);
template <typename T> std::vector<Tensor<T>> split(const Tensor<T>& x, int axis,
                                                   const std::vector<std::int64_t>& sizes);

/// Row gather on a 2-D tensor: out[i, :] = x[rows[i], :]. The backward pass
/// scatter-adds, so repeated rows are allowed.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> rows);

/// [.., m, k] x [.., k, n] -> [.., m, n]; leading batch dims broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[.., in] * w[out, in]^T + bias[out]. bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& bias);

/// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Normalizes over the last dimension.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                                           const Tensor<T>& beta, T eps);

/// NCHW group normalization with per-channel affine.
template <typename T> Tensor<T> group_norm(const Tensor<T>& x, int groups,
                                           const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

/// Output extent of a convolution along one axis. Floor semantics, but only
/// trailing padding may be dropped: a remainder that would discard real input
/// pixels is a DimensionError, as is a kernel larger than the padded input.
std::int64_t conv_output_size(std::int64_t input, std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding);

/// x[B, C, H, W] * w[O, C, kh, kw] (+ bias[O]) with zero padding.
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& bias, Conv2dOptions opt = {});

/// Per-channel convolution; w is [C, 1, kh, kw].
template <typename T> Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                                                 const Tensor<T>& bias, Conv2dOptions opt = {});

/// [B, C, H, W] -> [B, C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Nearest-neighbour upsampling of an NCHW tensor by an integer factor.
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor);

/// Samples x[B, C, H, W] at real (y, x) pixel positions coords[B, 2, H', W'].
/// Positions outside the image read as zero. Differentiable in x and coords.
template <typename T> Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& coords);

/// sum_i weights[i] * parts[i]; weights is a 1-D tensor with one entry per part.
template <typename T> Tensor<T> weighted_sum(const std::vector<Tensor<T>>& parts,
                                             const Tensor<T>& weights);

/// Accumulates forward FLOPs of counted ops issued on this thread while alive.
/// Counted: matmul, linear, conv2d, depthwise_conv2d (2 per MAC), bilinear_sample
/// (4 MACs per output element), weighted_sum (1 MAC per part element), softmax,
/// layer_norm and group_norm (5 per element). Everything else counts zero.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t total() const;
  const std::map<std::string, std::uint64_t>& by_op() const { return by_op_; }
  void add(const char* op, std::uint64_t flops) { by_op_[op] += flops; }

 private:
  FlopCounter* previous_;
  std::map<std::string, std::uint64_t> by_op_;
};

namespace detail {
void count_flops(const char* op, std::uint64_t flops);
}

}  // namespace citnet
