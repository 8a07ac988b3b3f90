#include "citnet/ddconv.hpp"

namespace citnet {

std::vector<GridOffset> base_grid(std::int64_t k) {
  if (k < 1) throw ConfigError("base_grid: kernel size must be >= 1");
  std::vector<GridOffset> grid;
  const std::int64_t c = k / 2;
  for (std::int64_t i = 0; i < k; ++i) {
    for (std::int64_t j = 0; j < k; ++j) grid.push_back({i - c, j - c});
  }
  return grid;
}

template <typename T>
DDConv<T>::DDConv(const DDConvOptions& opt, Rng& rng) : opt_(opt) {
  if (opt.in_channels <= 0 || opt.out_channels <= 0) {
    throw ConfigError("DDConv: channel counts must be positive");
  }
  if (opt.kernel < 1 || opt.stride < 1 || opt.padding < 0) {
    throw ConfigError("DDConv: invalid kernel/stride/padding");
  }
  if (opt.banks < 1) throw ConfigError("DDConv: need at least one weight bank");
  const std::int64_t k = opt.kernel, taps = k * k;
  for (int i = 0; i < opt.banks; ++i) {
    banks.push_back(nn::fan_in_uniform<T>({opt.out_channels, opt.in_channels, k, k},
                                          opt.in_channels * taps, rng));
  }
  if (opt.deformable) {
    offset_head.weight = nn::param_zeros<T>({2 * taps, opt.in_channels, k, k});
    offset_head.bias = nn::param_zeros<T>({2 * taps});
    offset_head.opt = {opt.stride, opt.padding};
  }
  if (opt.banks > 1) {
    if (opt.static_alpha) {
      alpha_logits = nn::param_zeros<T>({opt.banks});
    } else {
      coeff_head = nn::Linear<T>(opt.in_channels, opt.banks, true, rng);
    }
  }
}

template <typename T>
std::int64_t DDConv<T>::out_size(std::int64_t in) const {
  return conv_output_size(in, opt_.kernel, opt_.stride, opt_.padding);
}

template <typename T>
Tensor<T> DDConv<T>::predict_offsets(const Tensor<T>& x) const {
  if (x.ndim() != 4 || x.dim(1) != opt_.in_channels) {
    throw DimensionError("DDConv: expected [B, " + std::to_string(opt_.in_channels) +
                         ", H, W], got " + to_string(x.shape()));
  }
  if (!opt_.deformable) {
    const std::int64_t taps = opt_.kernel * opt_.kernel;
    return Tensor<T>::zeros({x.dim(0), 2 * taps, out_size(x.dim(2)), out_size(x.dim(3))});
  }
  return offset_head(x);
}

template <typename T>
Tensor<T> DDConv<T>::coefficients(const Tensor<T>& x) const {
  if (opt_.banks == 1) return Tensor<T>::full({x.dim(0), 1}, T(1));
  if (opt_.static_alpha) return reshape(softmax(alpha_logits, 0), {1, opt_.banks});
  return softmax(coeff_head(global_avg_pool(x)), 1);
}

template <typename T>
Tensor<T> DDConv<T>::stacked_banks() const {
  if (banks.size() == 1) return reshape(banks[0], {1, -1});
  std::vector<Tensor<T>> rows;
  for (const auto& b : banks) rows.push_back(reshape(b, {1, -1}));
  return concat(rows, 0);
}

template <typename T>
Tensor<T> DDConv<T>::dynamic_weights(const Tensor<T>& x) const {
  const std::int64_t k = opt_.kernel;
  const auto alpha = coefficients(x);
  return reshape(matmul(alpha, stacked_banks()),
                 {alpha.dim(0), opt_.out_channels, opt_.in_channels, k, k});
}

template <typename T>
Tensor<T> DDConv<T>::sampling_coords(const Tensor<T>& offsets, std::int64_t height,
                                     std::int64_t width) const {
  const std::int64_t batch = offsets.dim(0), oh = offsets.dim(2), ow = offsets.dim(3);
  const std::int64_t k = opt_.kernel, taps = k * k;
  const auto grid = base_grid(k);
  // Regular tap positions in input pixel space: o * stride - padding + floor(k/2) + tap.
  std::vector<T> base(static_cast<std::size_t>(2 * taps * oh * ow));
  for (std::int64_t m = 0; m < taps; ++m) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const std::int64_t cy = y * opt_.stride - opt_.padding + k / 2;
        const std::int64_t cx = xx * opt_.stride - opt_.padding + k / 2;
        base[((0 * taps + m) * oh + y) * ow + xx] = static_cast<T>(cy + grid[m].dy);
        base[((1 * taps + m) * oh + y) * ow + xx] = static_cast<T>(cx + grid[m].dx);
      }
    }
  }
  const auto base_t = Tensor<T>::from({1, 2, taps, oh, ow}, std::move(base));
  const auto per_tap = permute(reshape(offsets, {batch, taps, 2, oh, ow}), {0, 2, 1, 3, 4});
  return reshape(add(per_tap, base_t), {batch, 2, taps * oh, ow});
}

template <typename T>
Tensor<T> DDConv<T>::forward(const Tensor<T>& x) const {
  const auto offsets = predict_offsets(x);
  const std::int64_t batch = x.dim(0), oh = offsets.dim(2), ow = offsets.dim(3);
  if (!opt_.deformable && opt_.banks == 1) {
    return conv2d(x, banks[0], Tensor<T>(), Conv2dOptions{opt_.stride, opt_.padding});
  }
  const std::int64_t taps = opt_.kernel * opt_.kernel;
  const std::int64_t ck = opt_.in_channels * taps;
  const auto coords = sampling_coords(offsets, x.dim(2), x.dim(3));
  const auto cols = reshape(bilinear_sample(x, coords), {batch, ck, oh * ow});
  const auto alpha = coefficients(x);
  const auto kernel = reshape(matmul(alpha, stacked_banks()), {alpha.dim(0), opt_.out_channels, ck});
  return reshape(matmul(kernel, cols), {batch, opt_.out_channels, oh, ow});
}

template <typename T>
void DDConv<T>::params(const std::string& prefix, nn::ParamList<T>& out) const {
  for (std::size_t i = 0; i < banks.size(); ++i) {
    out.emplace_back(nn::join(prefix, "banks." + std::to_string(i)), banks[i]);
  }
  if (opt_.deformable) offset_head.params(nn::join(prefix, "offset_head"), out);
  if (opt_.banks > 1) {
    if (opt_.static_alpha) {
      out.emplace_back(nn::join(prefix, "coeff_head.logits"), alpha_logits);
    } else {
      coeff_head.params(nn::join(prefix, "coeff_head"), out);
    }
  }
}

template class DDConv<float>;
template class DDConv<double>;

}  // namespace citnet
