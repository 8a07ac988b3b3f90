#include "citnet/verify.hpp"
#include "citnet/wacam.hpp"
#include "helpers.hpp"

namespace citnet {
namespace {

using testing::rand_d;
using testing::TD;

Wacam<double> make(std::uint64_t seed, std::int64_t dim, std::int64_t window, std::int64_t heads,
                   bool shifted, std::int64_t side, std::array<bool, 4> on = {true, true, true, true}) {
  Rng rng(seed);
  WacamOptions opt;
  opt.dim = dim;
  opt.window = window;
  opt.heads = heads;
  opt.shifted = shifted;
  opt.branches = on;
  return Wacam<double>(opt, side, side, rng);
}

// y[r, o] = b[o] + sum_i x[r, i] W[o, i]
std::vector<double> dense(const std::vector<double>& x, std::int64_t rows, const nn::Linear<double>& l) {
  const std::int64_t in = l.weight.dim(1), out = l.weight.dim(0);
  std::vector<double> y(static_cast<std::size_t>(rows * out));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t o = 0; o < out; ++o) {
      double acc = l.bias.defined() ? l.bias.at(o) : 0.0;
      for (std::int64_t i = 0; i < in; ++i) acc += x[r * in + i] * l.weight.at(o * in + i);
      y[r * out + o] = acc;
    }
  }
  return y;
}

void softmax_rows(std::vector<double>& s, std::int64_t len) {
  for (std::size_t r = 0; r < s.size() / len; ++r) {
    double mx = -INFINITY, sum = 0;
    for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, s[r * len + j]);
    for (std::int64_t j = 0; j < len; ++j) sum += (s[r * len + j] = std::exp(s[r * len + j] - mx));
    for (std::int64_t j = 0; j < len; ++j) s[r * len + j] /= sum;
  }
}

std::vector<double> window_of(const TD& z, std::int64_t w) {
  const std::int64_t n = z.dim(1) * z.dim(2);
  return {z.data().begin() + w * n, z.data().begin() + (w + 1) * n};
}

TEST(WindowGrid, ValidatesGeometry) {
  EXPECT_THROW(make_window_grid(8, 8, 3, 0), DimensionError);
  EXPECT_THROW(make_window_grid(8, 8, 4, 4), ConfigError);
  EXPECT_THROW(make_window_grid(8, 8, 4, -1), ConfigError);
  const auto g = make_window_grid(8, 12, 4, 2);
  EXPECT_EQ(g.windows(), 6);
  EXPECT_EQ(g.tokens(), 16);
  EXPECT_EQ(g.source.size(), 96u);
}

TEST(WindowGrid, PartitionAndMergeAgainstRollOracle) {
  const auto o = verify::window_roundtrip(3);
  EXPECT_TRUE(o.passed) << o.detail;
}

TEST(WindowGrid, MaskMatchesBruteForceWrapLabels) {
  const auto o = verify::mask_matches_regions();
  EXPECT_TRUE(o.passed) << o.detail;
}

TEST(RelativePosition, IndexTableForWindowTwo) {
  EXPECT_EQ(relative_position_index(2),
            (std::vector<std::int64_t>{4, 3, 1, 0, 5, 4, 2, 1, 7, 6, 4, 3, 8, 7, 5, 4}));
  const auto idx = relative_position_index(7);
  EXPECT_EQ(*std::max_element(idx.begin(), idx.end()), 168);
  EXPECT_EQ(idx[0], 84);  // (0, 0) offset sits at the table centre
}

TEST(Wacam, SpatialBranchMatchesDenseOracle) {
  const auto layer = make(1, 32, 4, 2, true, 8);
  Rng rng(11);
  const std::int64_t bw = 4, n = 16, c = 4, h = 2, hd = 2;
  const auto z = rand_d({bw, n, c}, rng);
  const auto mask = attention_mask<double>(layer.grid());
  const auto got = layer.branch_spatial(z, mask);
  const auto idx = relative_position_index(4);
  for (std::int64_t w = 0; w < bw; ++w) {
    const auto qkv = dense(window_of(z, w), n, layer.spatial_qkv);  // [n, 3c] as [3, H, hd]
    for (std::int64_t head = 0; head < h; ++head) {
      std::vector<double> s(static_cast<std::size_t>(n * n));
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          double dot = 0;
          for (std::int64_t d = 0; d < hd; ++d) {
            dot += qkv[i * 3 * c + head * hd + d] * qkv[j * 3 * c + c + head * hd + d];
          }
          s[i * n + j] = dot / std::sqrt(double(hd)) + layer.rpb.at(idx[i * n + j] * h + head) +
                         mask.at((w * n + i) * n + j);
        }
      }
      softmax_rows(s, n);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t d = 0; d < hd; ++d) {
          double acc = 0;
          for (std::int64_t j = 0; j < n; ++j) acc += s[i * n + j] * qkv[j * 3 * c + 2 * c + head * hd + d];
          EXPECT_NEAR(got.at((w * n + i) * c + head * hd + d), acc, 1e-12);
        }
      }
    }
  }
}

TEST(Wacam, ChannelBranchMatchesDenseOracle) {
  const auto layer = make(2, 32, 4, 1, false, 8);
  Rng rng(12);
  const std::int64_t bw = 4, n = 16, c = 4;
  const auto z = rand_d({bw, n, c}, rng);
  const auto got = layer.branch_channel(z);
  for (std::int64_t w = 0; w < bw; ++w) {
    const auto zw = window_of(z, w);
    std::vector<double> zt(static_cast<std::size_t>(c * n));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ch = 0; ch < c; ++ch) zt[ch * n + i] = zw[i * c + ch];
    }
    const auto qkv = dense(zt, c, layer.channel_qkv);  // [c, 3N]
    std::vector<double> s(static_cast<std::size_t>(c * c));
    for (std::int64_t a = 0; a < c; ++a) {
      for (std::int64_t b = 0; b < c; ++b) {
        double dot = 0;
        for (std::int64_t i = 0; i < n; ++i) dot += qkv[a * 3 * n + i] * qkv[b * 3 * n + n + i];
        s[a * c + b] = dot / std::sqrt(double(n));
      }
    }
    softmax_rows(s, c);
    for (std::int64_t a = 0; a < c; ++a) {
      for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0;
        for (std::int64_t b = 0; b < c; ++b) acc += s[a * c + b] * qkv[b * 3 * n + 2 * n + i];
        EXPECT_NEAR(got.at((w * n + i) * c + a), acc, 1e-12);
      }
    }
  }
}

TEST(Wacam, CrossBranchesMatchDenseOracle) {
  const auto layer = make(3, 32, 4, 1, false, 8);
  Rng rng(13);
  const std::int64_t bw = 4, m = 4, n = 16, c = 4, d = 4;
  const auto z = rand_d({bw, n, c}, rng);
  for (Branch axis : {Branch::CrossH, Branch::CrossW}) {
    const auto& p = axis == Branch::CrossH ? layer.cross_h : layer.cross_w;
    const auto got = layer.branch_cross(z, axis);
    for (std::int64_t w = 0; w < bw; ++w) {
      const auto zw = window_of(z, w);
      std::vector<double> zt(static_cast<std::size_t>(c * n)), rows(static_cast<std::size_t>(m * m * c));
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) zt[ch * n + i] = zw[i * c + ch];
      }
      // Row r gathers the tokens of grid row r (C-H) or grid column r (C-W).
      for (std::int64_t r = 0; r < m; ++r) {
        for (std::int64_t t = 0; t < m; ++t) {
          const std::int64_t token = axis == Branch::CrossH ? r * m + t : t * m + r;
          for (std::int64_t ch = 0; ch < c; ++ch) rows[(r * m + t) * c + ch] = zw[token * c + ch];
        }
      }
      const auto q = dense(zt, c, p.q), k = dense(rows, m, p.k), v = dense(rows, m, p.v);
      std::vector<double> s(static_cast<std::size_t>(c * m));
      for (std::int64_t a = 0; a < c; ++a) {
        for (std::int64_t r = 0; r < m; ++r) {
          double dot = 0;
          for (std::int64_t e = 0; e < d; ++e) dot += q[a * d + e] * k[r * d + e];
          s[a * m + r] = dot / std::sqrt(double(d));
        }
      }
      softmax_rows(s, m);
      std::vector<double> o(static_cast<std::size_t>(c * d), 0.0);
      for (std::int64_t a = 0; a < c; ++a) {
        for (std::int64_t e = 0; e < d; ++e) {
          for (std::int64_t r = 0; r < m; ++r) o[a * d + e] += s[a * m + r] * v[r * d + e];
        }
      }
      const auto y = dense(o, c, p.out);  // [c, N]
      for (std::int64_t a = 0; a < c; ++a) {
        for (std::int64_t i = 0; i < n; ++i) EXPECT_NEAR(got.at((w * n + i) * c + a), y[a * n + i], 1e-12);
      }
    }
  }
}

TEST(Wacam, AttentionRowsMaskAndFusion) {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& o : {verify::attention_rows(seed), verify::mask_suppression(seed),
                          verify::fuse_selects_branch(seed), verify::lambda_gradient(seed)}) {
      EXPECT_TRUE(o.passed) << o.detail;
    }
  }
}

TEST(Wacam, DisabledBranchesContributeNothing) {
  const auto full = make(4, 16, 2, 1, true, 4);
  const auto spatial_only = make(4, 16, 2, 1, true, 4, {true, false, false, false});
  std::copy_n(std::array<double, 4>{1, 0, 0, 0}.begin(), 4, full.lambda.mutable_data().begin());
  Rng rng(14);
  const auto x = rand_d({2, 4, 4, 16}, rng);
  const auto a = full.forward(x), b = spatial_only.forward(x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  WacamTrace<double> trace;
  spatial_only.forward(x, &trace);
  EXPECT_FALSE(trace.attention[1].defined());
  for (double v : trace.outputs[2].data()) EXPECT_EQ(v, 0);
}

TEST(Wacam, SmallGridsShrinkTheWindowAndDropTheShift) {
  const auto layer = make(5, 16, 7, 1, true, 4);
  EXPECT_EQ(layer.window(), 4);
  EXPECT_EQ(layer.grid().shift, 0);
  EXPECT_EQ(layer.rpb.shape(), (Shape{49, 1}));
  Rng rng(15);
  EXPECT_EQ(layer.forward(rand_d({1, 4, 4, 16}, rng)).shape(), (Shape{1, 4, 4, 16}));
}

TEST(Wacam, RejectsBadWidths) {
  EXPECT_THROW(make(6, 12, 2, 1, false, 4), ConfigError);
  EXPECT_THROW(make(6, 16, 2, 3, false, 4), ConfigError);
  const auto layer = make(6, 16, 2, 1, false, 4);
  Rng rng(16);
  EXPECT_THROW(layer.forward(rand_d({1, 4, 4, 8}, rng)), DimensionError);
}

TEST(Wacam, PositionBiasGathersTheTable) {
  const auto layer = make(7, 16, 2, 2, false, 4);
  const auto bias = layer.position_bias();
  ASSERT_EQ(bias.shape(), (Shape{2, 4, 4}));
  const auto idx = relative_position_index(2);
  for (int h = 0; h < 2; ++h) {
    for (int i = 0; i < 16; ++i) EXPECT_EQ(bias.at(h * 16 + i), layer.rpb.at(idx[i] * 2 + h));
  }
}

TEST(Wacam, BranchGradients) {
  for (const char* op : {"spatial", "channel", "cross_h", "cross_w", "fuse"}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto o = verify::grad_op(op, seed);
      EXPECT_TRUE(o.passed) << op << ": " << o.detail;
    }
  }
}

}  // namespace
}  // namespace citnet
