#pragma once

#include <string>
#include <utility>
#include <vector>

#include "citnet/block.hpp"
#include "citnet/config.hpp"
#include "citnet/ddconv.hpp"

namespace citnet {

/// [B, h, w, C] -> [B, h/2, w/2, 2C]: 2x2 neighbours concatenated in the order
/// (0,0), (1,0), (0,1), (1,1), a bias-free 4C -> 2C linear, then LayerNorm.
template <typename T>
struct PatchMerge {
  nn::Linear<T> reduce;
  nn::LayerNorm<T> norm;

  PatchMerge() = default;
  PatchMerge(std::int64_t dim, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void params(const std::string& prefix, nn::ParamList<T>& out) const;
};

/// [B, h, w, C] -> [B, f h, f w, C'] with C' = C / 2 for f = 2; the final
/// expansion uses f = patch size and keeps C. Bias-free linear C -> f^2 C',
/// rearrange, LayerNorm.
template <typename T>
struct PatchExpand {
  nn::Linear<T> expand;
  nn::LayerNorm<T> norm;
  std::int64_t factor = 2;
  std::int64_t out_dim = 0;

  PatchExpand() = default;
  PatchExpand(std::int64_t dim, std::int64_t factor, std::int64_t out_dim, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  void params(const std::string& prefix, nn::ParamList<T>& out) const;
};

/// DDConv 3x3 -> GroupNorm -> GELU on NCHW maps.
template <typename T>
struct ConvUnit {
  DDConv<T> conv;
  nn::GroupNorm<T> norm;

  ConvUnit() = default;
  ConvUnit(const ModelConfig& cfg, std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return gelu(norm(conv.forward(x))); }
  void params(const std::string& prefix, nn::ParamList<T>& out) const;
};

/// Shapes observed at named points of a forward pass.
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> points;
  void add(const std::string& name, const Shape& s) { points.emplace_back(name, s); }
  const Shape* find(const std::string& name) const;
};

template <typename T>
class CiTNet {
 public:
  CiTNet() = default;
  CiTNet(const ModelConfig& cfg, std::uint64_t seed);

  /// x [B, in_channels, H, W] -> logits [B, n_classes, H, W].
  Tensor<T> forward(const Tensor<T>& x, ForwardTrace* trace = nullptr) const;

  Tensor<T> patch_embed(const Tensor<T>& x) const;
  /// Decoder input of the Transformer branch at decoder stage s (4..6):
  /// concat(up, own skip, other skip) -> pointwise projection, all channels-last.
  Tensor<T> cross_feed_trans(int stage, const Tensor<T>& up, const Tensor<T>& trans_skip,
                             const Tensor<T>& cnn_skip) const;
  /// Same for the CNN branch, channels-first.
  Tensor<T> cross_feed_cnn(int stage, const Tensor<T>& up, const Tensor<T>& cnn_skip,
                           const Tensor<T>& trans_skip) const;

  nn::ParamList<T> params() const;
  std::int64_t param_count() const { return nn::count(params()); }
  const ModelConfig& config() const { return cfg_; }

  /// Names of tensors listed more than once (by storage); empty when no
  /// weight is shared, in particular not between the two branches.
  std::vector<std::string> audit_sharing() const;

  // Shared stem.
  nn::Conv2d<T> embed_proj;
  nn::LayerNorm<T> embed_norm;
  // Transformer branch: block pairs per stage, merges after stages 0..2,
  // expands before stages 4..6, cross projections at 4..6, final expansion.
  std::vector<std::vector<BlockPair<T>>> stages;
  std::vector<PatchMerge<T>> merges;
  std::vector<PatchExpand<T>> expands;
  std::vector<nn::Linear<T>> trans_cross;
  PatchExpand<T> trans_head;
  // CNN branch: two units per encoder stage; decoder stages upsample, convolve,
  // fuse with the skips, convolve again.
  std::vector<std::array<ConvUnit<T>, 2>> cnn_stages;
  std::vector<nn::Conv2d<T>> cnn_cross;
  nn::Conv2d<T> cnn_head;
  nn::Conv2d<T> fuse;

 private:
  ModelConfig cfg_;
};

}  // namespace citnet
