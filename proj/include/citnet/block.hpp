#pragma once

#include <string>
#include <vector>

#include "citnet/wacam.hpp"

namespace citnet {

struct LpmOptions {
  std::int64_t dim = 0;
  std::int64_t ratio = 4;
  bool lightweight = true;  // false: dense C -> rC -> C MLP
};

/// Ghost-style perceptron on [B, h, w, C]: half of the rC hidden features come
/// from a linear map, the other half from a depthwise 3x3 over those features
/// on the token grid. GELU after the concatenation, then rC -> C.
template <typename T>
class Lpm {
 public:
  Lpm() = default;
  Lpm(const LpmOptions& opt, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void params(const std::string& prefix, nn::ParamList<T>& out) const;
  const LpmOptions& options() const { return opt_; }

  nn::Linear<T> primary;  // C -> rC/2, or C -> rC when dense
  Tensor<T> cheap_weight; // [rC/2, 1, 3, 3]
  Tensor<T> cheap_bias;   // [rC/2]
  nn::Linear<T> project;  // rC -> C

 private:
  LpmOptions opt_;
};

/// Parameter counts of the two perceptron designs at width C and ratio r.
std::int64_t lpm_param_count(std::int64_t dim, std::int64_t ratio);
std::int64_t mlp_param_count(std::int64_t dim, std::int64_t ratio);

struct BlockOptions {
  WacamOptions attention;  // `shifted` is ignored; the pair sets it per block
  std::int64_t mlp_ratio = 4;
  bool lightweight = true;
};

/// Two successive pre-norm blocks: W-ACAM, LPM, SW-ACAM, LPM, each wrapped as
/// x + f(LN(x)).
template <typename T>
class BlockPair {
 public:
  BlockPair() = default;
  BlockPair(const BlockOptions& opt, std::int64_t height, std::int64_t width, Rng& rng);

  /// When `trace` is given, appends the sub-op sequence ("LN", "W-ACAM", "ADD", ...).
  Tensor<T> forward(const Tensor<T>& x, std::vector<std::string>* trace = nullptr) const;
  void params(const std::string& prefix, nn::ParamList<T>& out) const;
  /// Lists the attention layers under their own prefixes, the rest under `prefix`.
  void params(const std::string& prefix, const std::string& attn1_prefix,
              const std::string& attn2_prefix, nn::ParamList<T>& out) const;

  nn::LayerNorm<T> norm1, norm2, norm3, norm4;
  Wacam<T> attn1, attn2;
  Lpm<T> mlp1, mlp2;
};

}  // namespace citnet
