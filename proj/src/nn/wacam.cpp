#include "citnet/wacam.hpp"

#include <cmath>

namespace citnet {

WindowGrid make_window_grid(std::int64_t height, std::int64_t width, std::int64_t window,
                            std::int64_t shift) {
  if (window < 1) throw ConfigError("window size must be >= 1");
  if (height % window != 0 || width % window != 0) {
    throw DimensionError("window " + std::to_string(window) + " does not tile a " +
                         std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  if (shift < 0 || shift >= window) {
    throw ConfigError("shift " + std::to_string(shift) + " outside [0, " +
                      std::to_string(window) + ")");
  }
  WindowGrid g;
  g.height = height;
  g.width = width;
  g.window = window;
  g.shift = shift;
  const std::int64_t m = window, nwx = width / m;

  // Region labels on the rolled grid: bands [0, h-M), [h-M, h-s), [h-s, h) per axis.
  auto band = [&](std::int64_t p, std::int64_t extent) {
    if (shift == 0) return 0;
    if (p < extent - m) return 0;
    return p < extent - shift ? 1 : 2;
  };

  g.source.resize(static_cast<std::size_t>(height * width));
  g.region.resize(g.source.size());
  for (std::int64_t win = 0; win < g.windows(); ++win) {
    const std::int64_t wy = win / nwx, wx = win % nwx;
    for (std::int64_t t = 0; t < m * m; ++t) {
      const std::int64_t y = wy * m + t / m, x = wx * m + t % m;
      const std::int64_t r = win * m * m + t;
      g.source[r] = ((y + shift) % height) * width + (x + shift) % width;
      g.region[r] = band(y, height) * 3 + band(x, width);
    }
  }
  return g;
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowGrid& grid) {
  if (x.ndim() != 4 || x.dim(1) != grid.height || x.dim(2) != grid.width) {
    throw DimensionError("window_partition: input " + to_string(x.shape()) +
                         " does not match a " + std::to_string(grid.height) + "x" +
                         std::to_string(grid.width) + " grid");
  }
  const std::int64_t batch = x.dim(0), ch = x.dim(3), hw = grid.height * grid.width;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(batch * hw));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t r = 0; r < hw; ++r) rows[b * hw + r] = b * hw + grid.source[r];
  }
  return reshape(gather_rows(reshape(x, {batch * hw, ch}), std::move(rows)),
                 {batch * grid.windows(), grid.tokens(), ch});
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, const WindowGrid& grid) {
  const std::int64_t hw = grid.height * grid.width;
  if (windows.ndim() != 3 || windows.dim(1) != grid.tokens() ||
      windows.dim(0) % grid.windows() != 0) {
    throw DimensionError("window_merge: " + to_string(windows.shape()) +
                         " is not a stack of windows for this grid");
  }
  const std::int64_t batch = windows.dim(0) / grid.windows(), ch = windows.dim(2);
  std::vector<std::int64_t> inverse(static_cast<std::size_t>(hw));
  for (std::int64_t r = 0; r < hw; ++r) inverse[grid.source[r]] = r;
  std::vector<std::int64_t> rows(static_cast<std::size_t>(batch * hw));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t p = 0; p < hw; ++p) rows[b * hw + p] = b * hw + inverse[p];
  }
  return reshape(gather_rows(reshape(windows, {batch * hw, ch}), std::move(rows)),
                 {batch, grid.height, grid.width, ch});
}

template <typename T>
Tensor<T> attention_mask(const WindowGrid& grid) {
  if (grid.shift == 0) return {};
  const std::int64_t nw = grid.windows(), n = grid.tokens();
  std::vector<T> mask(static_cast<std::size_t>(nw * n * n), T(0));
  for (std::int64_t w = 0; w < nw; ++w) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        if (grid.region[w * n + i] != grid.region[w * n + j]) {
          mask[(w * n + i) * n + j] = static_cast<T>(kMaskValue);
        }
      }
    }
  }
  return Tensor<T>::from({nw, 1, n, n}, std::move(mask));
}

std::vector<std::int64_t> relative_position_index(std::int64_t window) {
  const std::int64_t m = window, n = m * m, side = 2 * m - 1;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t dy = i / m - j / m + m - 1;
      const std::int64_t dx = i % m - j % m + m - 1;
      idx[i * n + j] = dy * side + dx;
    }
  }
  return idx;
}

template <typename T>
Wacam<T>::Wacam(const WacamOptions& opt, std::int64_t height, std::int64_t width, Rng& rng)
    : opt_(opt) {
  if (opt.dim <= 0 || opt.dim % 8 != 0) {
    throw ConfigError("W-ACAM: dim " + std::to_string(opt.dim) + " is not divisible by 8");
  }
  const std::int64_t c = opt.dim / 8;
  if (opt.heads < 1 || c % opt.heads != 0) {
    throw ConfigError("W-ACAM: reduced dim " + std::to_string(c) + " is not divisible by " +
                      std::to_string(opt.heads) + " heads");
  }
  std::int64_t m = opt.window;
  std::int64_t shift = opt.shifted ? m / 2 : 0;
  if (std::min(height, width) <= m) {
    m = std::min(height, width);
    shift = 0;
  }
  grid_ = make_window_grid(height, width, m, shift);
  mask_ = attention_mask<T>(grid_);
  rp_index_ = relative_position_index(m);

  const std::int64_t n = m * m, d = c;
  compact = nn::Linear<T>(opt.dim, c, true, rng);
  spatial_qkv = nn::Linear<T>(c, 3 * c, true, rng);
  rpb = Tensor<T>::randn({(2 * m - 1) * (2 * m - 1), opt.heads}, rng, T(0.02), true);
  channel_qkv = nn::Linear<T>(n, 3 * n, true, rng);
  for (auto* p : {&cross_h, &cross_w}) {
    p->q = nn::Linear<T>(n, d, true, rng);
    p->k = nn::Linear<T>(m * c, d, true, rng);
    p->v = nn::Linear<T>(m * c, d, true, rng);
    p->out = nn::Linear<T>(d, n, true, rng);
  }
  lambda = nn::param_full<T>({4}, T(1));
  out = nn::Linear<T>(c, opt.dim, true, rng);
}

template <typename T>
Tensor<T> Wacam<T>::position_bias() const {
  const std::int64_t n = grid_.tokens();
  return permute(reshape(gather_rows(rpb, rp_index_), {n, n, opt_.heads}), {2, 0, 1});
}

template <typename T>
Tensor<T> Wacam<T>::branch_spatial(const Tensor<T>& z, const Tensor<T>& mask,
                                   Tensor<T>* attention) const {
  const std::int64_t bw = z.dim(0), n = z.dim(1), c = z.dim(2);
  const std::int64_t h = opt_.heads, hd = c / h;
  const auto qkv = permute(reshape(spatial_qkv(z), {bw, n, 3, h, hd}), {2, 0, 3, 1, 4});
  auto part = [&](std::int64_t i) { return reshape(narrow(qkv, 0, i, 1), {bw, h, n, hd}); };
  const auto q = scale(part(0), T(1) / std::sqrt(static_cast<T>(hd)));
  auto scores = add(matmul(q, transpose(part(1), -2, -1)), position_bias());
  if (mask.defined()) {
    const std::int64_t nw = mask.dim(0);
    scores = reshape(add(reshape(scores, {bw / nw, nw, h, n, n}), mask), {bw, h, n, n});
  }
  const auto attn = softmax(scores, -1);
  if (attention) *attention = attn;
  return reshape(permute(matmul(attn, part(2)), {0, 2, 1, 3}), {bw, n, c});
}

template <typename T>
Tensor<T> Wacam<T>::branch_channel(const Tensor<T>& z, Tensor<T>* attention) const {
  const std::int64_t n = z.dim(1);
  const auto qkv = split(channel_qkv(transpose(z, 1, 2)), 2, {n, n, n});
  const auto q = scale(qkv[0], T(1) / std::sqrt(static_cast<T>(n)));
  const auto attn = softmax(matmul(q, transpose(qkv[1], 1, 2)), -1);
  if (attention) *attention = attn;
  return transpose(matmul(attn, qkv[2]), 1, 2);
}

template <typename T>
Tensor<T> Wacam<T>::branch_cross(const Tensor<T>& z, Branch axis, Tensor<T>* attention) const {
  if (axis != Branch::CrossH && axis != Branch::CrossW) {
    throw UsageError("branch_cross: axis must be CrossH or CrossW");
  }
  const std::int64_t bw = z.dim(0), c = z.dim(2), m = grid_.window;
  const auto& p = axis == Branch::CrossH ? cross_h : cross_w;
  const auto q = p.q(transpose(z, 1, 2));
  auto grid = reshape(z, {bw, m, m, c});
  if (axis == Branch::CrossW) grid = permute(grid, {0, 2, 1, 3});
  const auto rows = reshape(grid, {bw, m, m * c});
  const T s = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
  const auto attn = softmax(matmul(scale(q, s), transpose(p.k(rows), 1, 2)), -1);
  if (attention) *attention = attn;
  return transpose(p.out(matmul(attn, p.v(rows))), 1, 2);
}

template <typename T>
Tensor<T> Wacam<T>::fuse(const std::array<Tensor<T>, 4>& outs) const {
  return weighted_sum(std::vector<Tensor<T>>(outs.begin(), outs.end()), lambda);
}

template <typename T>
Tensor<T> Wacam<T>::forward(const Tensor<T>& x, WacamTrace<T>* trace) const {
  if (x.ndim() != 4 || x.dim(3) != opt_.dim) {
    throw DimensionError("W-ACAM: expected [B, h, w, " + std::to_string(opt_.dim) + "], got " +
                         to_string(x.shape()));
  }
  const auto z = compact(window_partition(x, grid_));
  std::array<Tensor<T>, 4> outs;
  std::array<Tensor<T>, 4> maps;
  const auto& on = opt_.branches;
  if (on[0]) outs[0] = branch_spatial(z, mask_, &maps[0]);
  if (on[1]) outs[1] = branch_channel(z, &maps[1]);
  if (on[2]) outs[2] = branch_cross(z, Branch::CrossH, &maps[2]);
  if (on[3]) outs[3] = branch_cross(z, Branch::CrossW, &maps[3]);
  for (int i = 0; i < 4; ++i) {
    if (!on[i]) outs[i] = Tensor<T>::zeros(z.shape());
  }
  if (trace) {
    trace->attention = maps;
    trace->outputs = outs;
  }
  return window_merge(out(fuse(outs)), grid_);
}

template <typename T>
void Wacam<T>::params(const std::string& prefix, nn::ParamList<T>& list) const {
  compact.params(nn::join(prefix, "compact"), list);
  spatial_qkv.params(nn::join(prefix, "proj_qkv.b1"), list);
  channel_qkv.params(nn::join(prefix, "proj_qkv.b2"), list);
  const char* names[2] = {"proj_qkv.b3", "proj_qkv.b4"};
  const CrossProj* projs[2] = {&cross_h, &cross_w};
  for (int i = 0; i < 2; ++i) {
    const auto base = nn::join(prefix, names[i]);
    projs[i]->q.params(base + ".q", list);
    projs[i]->k.params(base + ".k", list);
    projs[i]->v.params(base + ".v", list);
    projs[i]->out.params(base + ".out", list);
  }
  list.emplace_back(nn::join(prefix, "rpb"), rpb);
  list.emplace_back(nn::join(prefix, "lambda"), lambda);
  out.params(nn::join(prefix, "out"), list);
}

#define CITNET_WACAM_INSTANTIATE(T)                                          \
  template Tensor<T> window_partition<T>(const Tensor<T>&, const WindowGrid&); \
  template Tensor<T> window_merge<T>(const Tensor<T>&, const WindowGrid&);     \
  template Tensor<T> attention_mask<T>(const WindowGrid&);                     \
  template class Wacam<T>;

CITNET_WACAM_INSTANTIATE(float)
CITNET_WACAM_INSTANTIATE(double)

}  // namespace citnet
