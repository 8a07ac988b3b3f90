#pragma once

#include <cmath>
#include <cstdint>

namespace citnet::kernels::detail {

// Four bilinear neighbours of a real (y, x) position, ordered
// (y0,x0), (y0,x1), (y1,x0), (y1,x1). Neighbours outside the image carry
// weight 0 and read as 0. floor() makes the split right-continuous, so at an
// integer coordinate the derivative is the slope towards the next pixel.
template <typename T>
struct Corners {
  std::int64_t index[4] = {0, 0, 0, 0};
  T weight[4] = {0, 0, 0, 0};
  bool valid[4] = {false, false, false, false};
  T ly = 0, lx = 0;

  T value(const T* img, int q) const { return valid[q] ? img[index[q]] : T(0); }
};

template <typename T>
inline Corners<T> corners(T y, T x, std::int64_t height, std::int64_t width) {
  Corners<T> c;
  if (!(y >= T(-1) && y < T(height) && x >= T(-1) && x < T(width))) return c;
  const T fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
  c.ly = y - fy;
  c.lx = x - fx;
  const std::int64_t ys[2] = {y0, y0 + 1};
  const std::int64_t xs[2] = {x0, x0 + 1};
  const T wy[2] = {T(1) - c.ly, c.ly};
  const T wx[2] = {T(1) - c.lx, c.lx};
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const int q = a * 2 + b;
      const bool ok = ys[a] >= 0 && ys[a] < height && xs[b] >= 0 && xs[b] < width;
      c.valid[q] = ok;
      if (ok) {
        c.index[q] = ys[a] * width + xs[b];
        c.weight[q] = wy[a] * wx[b];
      }
    }
  }
  return c;
}

}  // namespace citnet::kernels::detail
