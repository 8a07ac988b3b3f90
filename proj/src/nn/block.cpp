#include "citnet/block.hpp"

namespace citnet {

template <typename T>
Lpm<T>::Lpm(const LpmOptions& opt, Rng& rng) : opt_(opt) {
  const std::int64_t c = opt.dim, hidden = opt.ratio * opt.dim;
  if (c <= 0 || opt.ratio <= 0) throw ConfigError("LPM: dim and ratio must be positive");
  if (!opt.lightweight) {
    primary = nn::Linear<T>(c, hidden, true, rng);
  } else {
    if (hidden % 2 != 0) throw ConfigError("LPM: hidden width r*C must be even");
    primary = nn::Linear<T>(c, hidden / 2, true, rng);
    cheap_weight = nn::fan_in_uniform<T>({hidden / 2, 1, 3, 3}, 9, rng);
    cheap_bias = nn::param_zeros<T>({hidden / 2});
  }
  project = nn::Linear<T>(hidden, c, true, rng);
}

template <typename T>
Tensor<T> Lpm<T>::forward(const Tensor<T>& x) const {
  if (!opt_.lightweight) return project(gelu(primary(x)));
  const auto p = primary(x);
  const auto q = nn::to_channels_last(
      depthwise_conv2d(nn::to_channels_first(p), cheap_weight, cheap_bias, Conv2dOptions{1, 1}));
  return project(gelu(concat(std::vector<Tensor<T>>{p, q}, 3)));
}

template <typename T>
void Lpm<T>::params(const std::string& prefix, nn::ParamList<T>& out) const {
  primary.params(nn::join(prefix, "primary"), out);
  if (opt_.lightweight) {
    out.emplace_back(nn::join(prefix, "cheap.weight"), cheap_weight);
    out.emplace_back(nn::join(prefix, "cheap.bias"), cheap_bias);
  }
  project.params(nn::join(prefix, "project"), out);
}

std::int64_t lpm_param_count(std::int64_t c, std::int64_t r) {
  const std::int64_t half = r * c / 2;
  return (c * half + half) + (9 * half + half) + (r * c * c + c);
}

std::int64_t mlp_param_count(std::int64_t c, std::int64_t r) {
  return (c * r * c + r * c) + (r * c * c + c);
}

template <typename T>
BlockPair<T>::BlockPair(const BlockOptions& opt, std::int64_t height, std::int64_t width,
                        Rng& rng) {
  const std::int64_t c = opt.attention.dim;
  norm1 = nn::LayerNorm<T>(c);
  norm2 = nn::LayerNorm<T>(c);
  norm3 = nn::LayerNorm<T>(c);
  norm4 = nn::LayerNorm<T>(c);
  auto a = opt.attention;
  a.shifted = false;
  attn1 = Wacam<T>(a, height, width, rng);
  mlp1 = Lpm<T>({c, opt.mlp_ratio, opt.lightweight}, rng);
  a.shifted = true;
  attn2 = Wacam<T>(a, height, width, rng);
  mlp2 = Lpm<T>({c, opt.mlp_ratio, opt.lightweight}, rng);
}

template <typename T>
Tensor<T> BlockPair<T>::forward(const Tensor<T>& x, std::vector<std::string>* trace) const {
  auto note = [&](const char* op) {
    if (trace) trace->emplace_back(op);
  };
  auto sub = [&](const Tensor<T>& in, const nn::LayerNorm<T>& norm, const char* name,
                 auto&& body) {
    note("LN");
    const auto normed = norm(in);
    note(name);
    const auto y = body(normed);
    note("ADD");
    return add(in, y);
  };
  const auto t1 = sub(x, norm1, "W-ACAM", [&](const Tensor<T>& v) { return attn1.forward(v); });
  const auto t2 = sub(t1, norm2, "LPM", [&](const Tensor<T>& v) { return mlp1.forward(v); });
  const auto t3 = sub(t2, norm3, "SW-ACAM", [&](const Tensor<T>& v) { return attn2.forward(v); });
  return sub(t3, norm4, "LPM", [&](const Tensor<T>& v) { return mlp2.forward(v); });
}

template <typename T>
void BlockPair<T>::params(const std::string& prefix, nn::ParamList<T>& out) const {
  params(prefix, nn::join(prefix, "attn1"), nn::join(prefix, "attn2"), out);
}

template <typename T>
void BlockPair<T>::params(const std::string& prefix, const std::string& attn1_prefix,
                          const std::string& attn2_prefix, nn::ParamList<T>& out) const {
  norm1.params(nn::join(prefix, "norm1"), out);
  attn1.params(attn1_prefix, out);
  norm2.params(nn::join(prefix, "norm2"), out);
  mlp1.params(nn::join(prefix, "lpm1"), out);
  norm3.params(nn::join(prefix, "norm3"), out);
  attn2.params(attn2_prefix, out);
  norm4.params(nn::join(prefix, "norm4"), out);
  mlp2.params(nn::join(prefix, "lpm2"), out);
}

template class Lpm<float>;
template class Lpm<double>;
template class BlockPair<float>;
template class BlockPair<double>;

}  // namespace citnet
