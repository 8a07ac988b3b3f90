#pragma once

#include <vector>

#include "citnet/nn.hpp"

namespace citnet {

struct GridOffset {
  std::int64_t dy, dx;
  bool operator==(const GridOffset&) const = default;
};

/// The k*k kernel taps in row-major order, centred by -floor(k/2).
std::vector<GridOffset> base_grid(std::int64_t k);

struct DDConvOptions {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 1;
  int banks = 4;
  bool deformable = true;    // false: taps stay on the regular grid, no offset head
  bool static_alpha = false; // true: free learnable mixing logits instead of GAP -> linear
};

/// Dynamic deformable convolution. Each output pixel samples the input at the
/// regular kernel taps plus learned per-tap offsets (bilinear, zero outside the
/// image) and applies a per-sample kernel sum_i alpha_i W_i with alpha a softmax.
template <typename T>
class DDConv {
 public:
  DDConv() = default;
  DDConv(const DDConvOptions& opt, Rng& rng);

  /// [B, 2k^2, H', W']; channel 2m is dy of tap m, 2m+1 its dx.
  Tensor<T> predict_offsets(const Tensor<T>& x) const;
  /// [B, n] mixing weights (rows sum to 1). With static_alpha the batch dim is 1.
  Tensor<T> coefficients(const Tensor<T>& x) const;
  /// [B, out, in, k, k] aggregated kernels.
  Tensor<T> dynamic_weights(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x) const;

  /// Sampling positions [B, 2, k^2 * H', W'] for the given offsets.
  Tensor<T> sampling_coords(const Tensor<T>& offsets, std::int64_t height, std::int64_t width) const;

  void params(const std::string& prefix, nn::ParamList<T>& out) const;
  const DDConvOptions& options() const { return opt_; }
  std::int64_t out_size(std::int64_t in) const;

  std::vector<Tensor<T>> banks;   // each [out, in, k, k]
  nn::Conv2d<T> offset_head;      // k x k conv to 2k^2 channels, zero init
  nn::Linear<T> coeff_head;       // in -> n
  Tensor<T> alpha_logits;         // [n], static_alpha only

 private:
  Tensor<T> stacked_banks() const;
  DDConvOptions opt_;
};

}  // namespace citnet
