#include "citnet/nn.hpp"

#include <cmath>

namespace citnet::nn {

template <typename T>
std::int64_t count(const ParamList<T>& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  return Tensor<T>::uniform(shape, rng, -bound, bound, true);
}

template <typename T>
Tensor<T> param_zeros(const Shape& shape) {
  return Tensor<T>::zeros(shape, true);
}

template <typename T>
Tensor<T> param_full(const Shape& shape, T value) {
  return Tensor<T>::full(shape, value, true);
}

template <typename T>
Linear<T>::Linear(std::int64_t in, std::int64_t out, bool with_bias, Rng& rng)
    : weight(fan_in_uniform<T>({out, in}, in, rng)) {
  if (with_bias) bias = param_zeros<T>({out});
}

template <typename T>
void Linear<T>::params(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(join(prefix, "weight"), weight);
  if (bias.defined()) out.emplace_back(join(prefix, "bias"), bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::int64_t dim)
    : gamma(param_full<T>({dim}, T(1))), beta(param_zeros<T>({dim})) {}

template <typename T>
void LayerNorm<T>::params(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(join(prefix, "gamma"), gamma);
  out.emplace_back(join(prefix, "beta"), beta);
}

template <typename T>
GroupNorm<T>::GroupNorm(std::int64_t channels, int g)
    : gamma(param_full<T>({channels}, T(1))), beta(param_zeros<T>({channels})), groups(g) {
  if (g <= 0 || channels % g != 0) {
    throw ConfigError("GroupNorm: " + std::to_string(channels) + " channels, " +
                      std::to_string(g) + " groups");
  }
}

template <typename T>
void GroupNorm<T>::params(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(join(prefix, "gamma"), gamma);
  out.emplace_back(join(prefix, "beta"), beta);
}

template <typename T>
Conv2d<T>::Conv2d(std::int64_t in, std::int64_t out, std::int64_t k, Conv2dOptions o,
                  bool with_bias, Rng& rng)
    : weight(fan_in_uniform<T>({out, in, k, k}, in * k * k, rng)), opt(o) {
  if (with_bias) bias = param_zeros<T>({out});
}

template <typename T>
void Conv2d<T>::params(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(join(prefix, "weight"), weight);
  if (bias.defined()) out.emplace_back(join(prefix, "bias"), bias);
}

#define CITNET_NN_INSTANTIATE(T)                                               \
  template std::int64_t count<T>(const ParamList<T>&);                         \
  template Tensor<T> fan_in_uniform<T>(const Shape&, std::int64_t, Rng&);      \
  template Tensor<T> param_zeros<T>(const Shape&);                             \
  template Tensor<T> param_full<T>(const Shape&, T);                           \
  template struct Linear<T>;                                                   \
  template struct LayerNorm<T>;                                                \
  template struct GroupNorm<T>;                                                \
  template struct Conv2d<T>;

CITNET_NN_INSTANTIATE(float)
CITNET_NN_INSTANTIATE(double)

}  // namespace citnet::nn
