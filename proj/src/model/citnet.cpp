#include "citnet/citnet.hpp"

#include <map>
#include <numeric>

namespace citnet {

template <typename T>
PatchMerge<T>::PatchMerge(std::int64_t dim, Rng& rng)
    : reduce(4 * dim, 2 * dim, false, rng), norm(2 * dim) {}

template <typename T>
Tensor<T> PatchMerge<T>::forward(const Tensor<T>& x) const {
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("patch merge needs even grid sides, got " + to_string(x.shape()));
  }
  // [B, h/2, dy, w/2, dx, C] -> [B, h/2, w/2, dx, dy, C]
  const auto gathered = permute(reshape(x, {b, h / 2, 2, w / 2, 2, c}), {0, 1, 3, 4, 2, 5});
  return norm(reduce(reshape(gathered, {b, h / 2, w / 2, 4 * c})));
}

template <typename T>
void PatchMerge<T>::params(const std::string& prefix, nn::ParamList<T>& out) const {
  reduce.params(nn::join(prefix, "reduce"), out);
  norm.params(nn::join(prefix, "norm"), out);
}

template <typename T>
PatchExpand<T>::PatchExpand(std::int64_t dim, std::int64_t f, std::int64_t out_c, Rng& rng)
    : expand(dim, f * f * out_c, false, rng), norm(out_c), factor(f), out_dim(out_c) {}

template <typename T>
Tensor<T> PatchExpand<T>::forward(const Tensor<T>& x) const {
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), f = factor;
  // [B, h, w, fy, fx, C'] -> [B, h, fy, w, fx, C']
  const auto up = permute(reshape(expand(x), {b, h, w, f, f, out_dim}), {0, 1, 3, 2, 4, 5});
  return norm(reshape(up, {b, h * f, w * f, out_dim}));
}

template <typename T>
void PatchExpand<T>::params(const std::string& prefix, nn::ParamList<T>& out) const {
  expand.params(nn::join(prefix, "expand"), out);
  norm.params(nn::join(prefix, "norm"), out);
}

template <typename T>
ConvUnit<T>::ConvUnit(const ModelConfig& cfg, std::int64_t in, std::int64_t out,
                      std::int64_t stride, Rng& rng) {
  DDConvOptions opt;
  opt.in_channels = in;
  opt.out_channels = out;
  opt.kernel = 3;
  opt.stride = stride;
  opt.padding = 1;
  opt.banks = cfg.ddconv_banks;
  opt.deformable = cfg.deformable;
  opt.static_alpha = cfg.static_alpha;
  conv = DDConv<T>(opt, rng);
  norm = nn::GroupNorm<T>(out, std::gcd(cfg.norm_groups, static_cast<int>(out)));
}

template <typename T>
void ConvUnit<T>::params(const std::string& prefix, nn::ParamList<T>& out) const {
  conv.params(nn::join(prefix, "ddconv"), out);
  norm.params(nn::join(prefix, "norm"), out);
}

const Shape* ForwardTrace::find(const std::string& name) const {
  for (const auto& [n, s] : points) {
    if (n == name) return &s;
  }
  return nullptr;
}

template <typename T>
CiTNet<T>::CiTNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  const auto plan = cfg.plan();
  const std::int64_t d = cfg.embed_dim, p = cfg.patch_size;

  embed_proj = nn::Conv2d<T>(cfg.in_channels, d, p, {p, 0}, true, rng);
  embed_norm = nn::LayerNorm<T>(d);

  for (const auto& s : plan) {
    BlockOptions bo;
    bo.attention.dim = s.channels;
    bo.attention.window = cfg.window;
    bo.attention.heads = s.heads;
    bo.attention.branches = cfg.branches;
    bo.mlp_ratio = cfg.mlp_ratio;
    bo.lightweight = cfg.lightweight_mlp;
    std::vector<BlockPair<T>> pairs;
    for (std::int64_t i = 0; i < s.layers / 2; ++i) {
      pairs.emplace_back(bo, s.resolution, s.resolution, rng);
    }
    stages.push_back(std::move(pairs));
  }
  for (int i = 0; i < 3; ++i) merges.emplace_back(plan[i].channels, rng);
  for (int i = 3; i < 6; ++i) expands.emplace_back(plan[i].channels, 2, plan[i].channels / 2, rng);
  for (int i = 4; i < 7; ++i) {
    trans_cross.emplace_back(3 * plan[i].channels, plan[i].channels, true, rng);
  }
  trans_head = PatchExpand<T>(d, p, d, rng);

  for (int i = 0; i < 7; ++i) {
    const std::int64_t c = plan[i].channels;
    const std::int64_t in = i == 0 ? d : plan[i - 1].channels;
    const std::int64_t stride = (i >= 1 && i <= 3) ? 2 : 1;
    cnn_stages.push_back({ConvUnit<T>(cfg, in, c, stride, rng), ConvUnit<T>(cfg, c, c, 1, rng)});
  }
  for (int i = 4; i < 7; ++i) {
    const std::int64_t c = plan[i].channels;
    cnn_cross.emplace_back(3 * c, c, 1, Conv2dOptions{1, 0}, true, rng);
  }
  cnn_head = nn::Conv2d<T>(d, d, 1, {1, 0}, true, rng);
  fuse = nn::Conv2d<T>(2 * d, cfg.n_classes, 1, {1, 0}, true, rng);
}

template <typename T>
Tensor<T> CiTNet<T>::patch_embed(const Tensor<T>& x) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels) {
    throw DimensionError("CiT-Net: expected [B, " + std::to_string(cfg_.in_channels) +
                         ", H, W], got " + to_string(x.shape()));
  }
  if (x.dim(2) % cfg_.patch_size != 0 || x.dim(3) % cfg_.patch_size != 0) {
    throw ConfigError("patch_size: " + std::to_string(cfg_.patch_size) +
                      " does not divide input " + to_string(x.shape()));
  }
  if (x.dim(2) != cfg_.image_size || x.dim(3) != cfg_.image_size) {
    throw DimensionError("CiT-Net: model built for " + std::to_string(cfg_.image_size) +
                         "x" + std::to_string(cfg_.image_size) + " inputs, got " +
                         to_string(x.shape()));
  }
  return embed_norm(nn::to_channels_last(embed_proj(x)));
}

namespace {

void require_same_grid(const Shape& a, const Shape& b, bool a_last, bool b_last) {
  const auto ha = a_last ? a[1] : a[2], wa = a_last ? a[2] : a[3];
  const auto hb = b_last ? b[1] : b[2], wb = b_last ? b[2] : b[3];
  if (ha != hb || wa != wb || a[0] != b[0]) {
    throw DimensionError("cross feed: resolution mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace

template <typename T>
Tensor<T> CiTNet<T>::cross_feed_trans(int stage, const Tensor<T>& up, const Tensor<T>& trans_skip,
                                      const Tensor<T>& cnn_skip) const {
  require_same_grid(up.shape(), trans_skip.shape(), true, true);
  require_same_grid(up.shape(), cnn_skip.shape(), true, false);
  const auto other = cfg_.cross_feed ? nn::to_channels_last(cnn_skip)
                                     : Tensor<T>::zeros(trans_skip.shape());
  return trans_cross.at(stage - 4)(concat(std::vector<Tensor<T>>{up, trans_skip, other}, 3));
}

template <typename T>
Tensor<T> CiTNet<T>::cross_feed_cnn(int stage, const Tensor<T>& up, const Tensor<T>& cnn_skip,
                                    const Tensor<T>& trans_skip) const {
  require_same_grid(up.shape(), cnn_skip.shape(), false, false);
  require_same_grid(up.shape(), trans_skip.shape(), false, true);
  const auto other = cfg_.cross_feed ? nn::to_channels_first(trans_skip)
                                     : Tensor<T>::zeros(cnn_skip.shape());
  return cnn_cross.at(stage - 4)(concat(std::vector<Tensor<T>>{up, cnn_skip, other}, 1));
}

template <typename T>
Tensor<T> CiTNet<T>::forward(const Tensor<T>& x, ForwardTrace* trace) const {
  auto note = [&](const std::string& name, const Tensor<T>& t) {
    if (trace) trace->add(name, t.shape());
  };
  auto run_blocks = [&](int i, Tensor<T> t) {
    for (const auto& pair : stages[i]) t = pair.forward(t);
    return t;
  };

  Tensor<T> t = patch_embed(x);
  note("embed", t);
  Tensor<T> c = nn::to_channels_first(t);
  std::array<Tensor<T>, 3> trans_skip, cnn_skip;

  for (int i = 0; i < 4; ++i) {
    if (i > 0) t = merges[i - 1].forward(t);
    t = run_blocks(i, t);
    c = cnn_stages[i][1].forward(cnn_stages[i][0].forward(c));
    note("trans." + std::to_string(i), t);
    note("cnn." + std::to_string(i), c);
    if (i < 3) {
      trans_skip[i] = t;
      cnn_skip[i] = c;
    }
  }
  for (int i = 4; i < 7; ++i) {
    const int k = 6 - i;
    const auto t_up = expands[i - 4].forward(t);
    const auto c_up = cnn_stages[i][0].forward(upsample_nearest(c, 2));
    const auto t_in = cross_feed_trans(i, t_up, trans_skip[k], cnn_skip[k]);
    const auto c_in = cross_feed_cnn(i, c_up, cnn_skip[k], trans_skip[k]);
    t = run_blocks(i, t_in);
    c = cnn_stages[i][1].forward(c_in);
    note("trans." + std::to_string(i), t);
    note("cnn." + std::to_string(i), c);
  }
  const auto t_head = nn::to_channels_first(trans_head.forward(t));
  const auto c_head = upsample_nearest(cnn_head(c), cfg_.patch_size);
  note("trans.head", t_head);
  note("cnn.head", c_head);
  const auto logits = fuse(concat(std::vector<Tensor<T>>{c_head, t_head}, 1));
  note("logits", logits);
  return logits;
}

template <typename T>
nn::ParamList<T> CiTNet<T>::params() const {
  nn::ParamList<T> out;
  embed_proj.params("embed.proj", out);
  embed_norm.params("embed.norm", out);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      const auto stage = std::to_string(s);
      stages[s][i].params("trans.block." + stage + "." + std::to_string(i),
                          "trans.wacam." + stage + "." + std::to_string(2 * i),
                          "trans.wacam." + stage + "." + std::to_string(2 * i + 1), out);
    }
  }
  for (std::size_t i = 0; i < merges.size(); ++i) {
    merges[i].params("trans.merge." + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < expands.size(); ++i) {
    expands[i].params("trans.expand." + std::to_string(i + 3), out);
  }
  for (std::size_t i = 0; i < trans_cross.size(); ++i) {
    trans_cross[i].params("trans.cross." + std::to_string(i + 4), out);
  }
  trans_head.params("trans.head", out);
  for (std::size_t s = 0; s < cnn_stages.size(); ++s) {
    for (int u = 0; u < 2; ++u) {
      cnn_stages[s][u].params("cnn.stage." + std::to_string(s) + ".unit" + std::to_string(u), out);
    }
  }
  for (std::size_t i = 0; i < cnn_cross.size(); ++i) {
    cnn_cross[i].params("cnn.cross." + std::to_string(i + 4), out);
  }
  cnn_head.params("cnn.head", out);
  fuse.params("fuse", out);
  return out;
}

template <typename T>
std::vector<std::string> CiTNet<T>::audit_sharing() const {
  std::map<const void*, std::vector<std::string>> owners;
  for (const auto& [name, t] : params()) owners[t.impl()].push_back(name);
  std::vector<std::string> shared;
  for (const auto& [ptr, names] : owners) {
    if (names.size() > 1) shared.insert(shared.end(), names.begin(), names.end());
  }
  return shared;
}

#define CITNET_MODEL_INSTANTIATE(T) \
  template struct PatchMerge<T>;    \
  template struct PatchExpand<T>;   \
  template struct ConvUnit<T>;      \
  template class CiTNet<T>;

CITNET_MODEL_INSTANTIATE(float)
CITNET_MODEL_INSTANTIATE(double)

}  // namespace citnet
