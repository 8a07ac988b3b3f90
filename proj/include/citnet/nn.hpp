#pragma once

// Parameter containers and the small stateless-forward layers the model is
// assembled from. Layers own their parameters as leaf tensors and list them
// by name through params().

#include <string>
#include <utility>
#include <vector>

#include "citnet/ops.hpp"
#include "citnet/tensor.hpp"

namespace citnet::nn {

template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <typename T>
std::int64_t count(const ParamList<T>& params);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) leaf with requires_grad set.
template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng);

template <typename T>
Tensor<T> param_zeros(const Shape& shape);
template <typename T>
Tensor<T> param_full(const Shape& shape, T value);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out] or undefined

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, bool with_bias, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
  void params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct GroupNorm {
  Tensor<T> gamma, beta;
  int groups = 1;
  T eps = T(1e-5);

  GroupNorm() = default;
  GroupNorm(std::int64_t channels, int groups);
  Tensor<T> operator()(const Tensor<T>& x) const {
    return group_norm(x, groups, gamma, beta, eps);
  }
  void params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out] or undefined
  Conv2dOptions opt;

  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t k, Conv2dOptions opt, bool with_bias,
         Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, opt); }
  void params(const std::string& prefix, ParamList<T>& out) const;
};

/// [B, h, w, C] <-> [B, C, h, w]
template <typename T>
Tensor<T> to_channels_first(const Tensor<T>& x) {
  return permute(x, {0, 3, 1, 2});
}
template <typename T>
Tensor<T> to_channels_last(const Tensor<T>& x) {
  return permute(x, {0, 2, 3, 1});
}

}  // namespace citnet::nn
