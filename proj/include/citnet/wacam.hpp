#pragma once

#include <array>
#include <vector>

#include "citnet/nn.hpp"

namespace citnet {

/// Tiling of an h x w token grid into M x M windows, optionally after a cyclic
/// roll by (-shift, -shift).
struct WindowGrid {
  std::int64_t height = 0, width = 0, window = 0, shift = 0;

  std::int64_t windows() const { return (height / window) * (width / window); }
  std::int64_t tokens() const { return window * window; }

  /// source[r] is the flat (y * width + x) grid position of windowed token r,
  /// where r = win * M^2 + ty * M + tx.
  std::vector<std::int64_t> source;
  /// Region id of every windowed token; tokens may attend to each other only
  /// when their ids match. All zero when shift == 0.
  std::vector<int> region;
};

WindowGrid make_window_grid(std::int64_t height, std::int64_t width, std::int64_t window,
                            std::int64_t shift);

/// [B, h, w, C] -> [B * nW, M^2, C]
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowGrid& grid);

/// Inverse of window_partition.
template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, const WindowGrid& grid);

/// Additive mask [nW, 1, M^2, M^2] with 0 inside a region and kMaskValue across
/// regions; undefined when the grid is unshifted.
template <typename T>
Tensor<T> attention_mask(const WindowGrid& grid);

inline constexpr double kMaskValue = -1e9;

/// Index into the (2M-1)^2 relative position table for each (i, j) token pair.
std::vector<std::int64_t> relative_position_index(std::int64_t window);

struct WacamOptions {
  std::int64_t dim = 0;     // C
  std::int64_t window = 7;  // M
  std::int64_t heads = 1;   // heads of the spatial branch
  bool shifted = false;
  std::array<bool, 4> branches = {true, true, true, true};
};

enum class Branch { Spatial = 0, Channel = 1, CrossH = 2, CrossW = 3 };

/// Attention maps and branch outputs captured during a forward pass.
template <typename T>
struct WacamTrace {
  std::array<Tensor<T>, 4> attention;  // spatial [Bw,H,N,N], channel [Bw,c,c], cross [Bw,c,M]
  std::array<Tensor<T>, 4> outputs;    // each [Bw, N, c]
};

/// Window adaptive complementary attention on a channels-last token grid.
/// A shared pointwise projection compresses C to c = C/8; four branches attend
/// over space, channels and the two channel/axis couplings; their outputs are
/// mixed by learnable lambdas and projected back to C.
template <typename T>
class Wacam {
 public:
  Wacam() = default;
  /// The layer is built for a fixed token grid. When the grid is no larger than
  /// the window, the window shrinks to the grid and shifting is disabled.
  Wacam(const WacamOptions& opt, std::int64_t height, std::int64_t width, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, WacamTrace<T>* trace = nullptr) const;

  Tensor<T> compact_projection(const Tensor<T>& windows) const { return compact(windows); }
  /// z is [Bw, N, c]; mask (optional) is [nW, 1, N, N].
  Tensor<T> branch_spatial(const Tensor<T>& z, const Tensor<T>& mask,
                           Tensor<T>* attention = nullptr) const;
  Tensor<T> branch_channel(const Tensor<T>& z, Tensor<T>* attention = nullptr) const;
  Tensor<T> branch_cross(const Tensor<T>& z, Branch axis, Tensor<T>* attention = nullptr) const;
  Tensor<T> fuse(const std::array<Tensor<T>, 4>& outs) const;
  /// [H, N, N] bias gathered from the table.
  Tensor<T> position_bias() const;

  void params(const std::string& prefix, nn::ParamList<T>& out) const;

  const WacamOptions& options() const { return opt_; }
  const WindowGrid& grid() const { return grid_; }
  std::int64_t window() const { return grid_.window; }
  std::int64_t reduced() const { return opt_.dim / 8; }

  struct CrossProj {
    nn::Linear<T> q, k, v, out;
  };

  nn::Linear<T> compact;       // C -> c
  nn::Linear<T> spatial_qkv;   // c -> 3c
  Tensor<T> rpb;               // [(2M-1)^2, H]
  nn::Linear<T> channel_qkv;   // N -> 3N
  CrossProj cross_h, cross_w;  // q: N -> d, k/v: M c -> d, out: d -> N
  Tensor<T> lambda;            // [4]
  nn::Linear<T> out;           // c -> C

 private:
  WacamOptions opt_;
  WindowGrid grid_;
  Tensor<T> mask_;
  std::vector<std::int64_t> rp_index_;
};

}  // namespace citnet
