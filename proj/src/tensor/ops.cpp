#include "citnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "citnet/kernels.hpp"

namespace citnet {

// --- flop counting ---------------------------------------------------------

namespace {
thread_local FlopCounter* t_counter = nullptr;
}

FlopCounter::FlopCounter() : previous_(t_counter) { t_counter = this; }
FlopCounter::~FlopCounter() { t_counter = previous_; }

std::uint64_t FlopCounter::total() const {
  std::uint64_t t = 0;
  for (const auto& [op, n] : by_op_) t += n;
  return t;
}

void detail::count_flops(const char* op, std::uint64_t flops) {
  if (t_counter) t_counter->add(op, flops);
}

namespace {

using detail::grad_buffer;
using detail::make_result;
using detail::recording;

int normalize_axis(int axis, int ndim, const char* op) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(ndim));
  }
  return a;
}

struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// --- broadcasting ----------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::int64_t> sa, sb;  // operand strides in output index space
  bool same = false;
};

Broadcast broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  bc.out.assign(nd, 1);
  bc.sa.assign(nd, 0);
  bc.sb.assign(nd, 0);
  const auto sta = strides_of(a), stb = strides_of(b);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::int64_t ia = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(nd - a.size());
    const std::int64_t ib = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(nd - b.size());
    const std::int64_t da = ia >= 0 ? a[ia] : 1;
    const std::int64_t db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                           to_string(b));
    }
    bc.out[i] = std::max(da, db);
    bc.sa[i] = (ia >= 0 && da != 1) ? sta[ia] : 0;
    bc.sb[i] = (ib >= 0 && db != 1) ? stb[ib] : 0;
  }
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::int64_t n = numel(bc.out);
  if (bc.same) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const int nd = static_cast<int>(bc.out.size());
  std::vector<std::int64_t> idx(nd, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      ia += bc.sa[d];
      ib += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.sa[d] * bc.out[d];
      ib -= bc.sb[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

// Binary elementwise op; da/db give the partial derivatives at (a, b).
template <typename T, class F, class DA, class DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const auto bc = broadcast_plan(a.shape(), b.shape(), op);
  std::vector<T> out(numel(bc.out));
  const auto av = a.data(), bv = b.data();
  for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
    out[i] = f(av[ia], bv[ib]);
  });
  const bool rec = recording<T>({&a, &b});
  return make_result<T>(op, bc.out, std::move(out), rec, [a, b, bc, da, db](TensorImpl<T>& o) {
    const auto& g = o.grad;
    const auto& ad = a.impl()->data;
    const auto& bd = b.impl()->data;
    if (a.requires_grad()) {
      auto& ga = grad_buffer(*a.impl());
      for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        ga[ia] += g[i] * da(ad[ia], bd[ib]);
      });
    }
    if (b.requires_grad()) {
      auto& gb = grad_buffer(*b.impl());
      for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        gb[ib] += g[i] * db(ad[ia], bd[ib]);
      });
    }
  });
}

// Unary elementwise op; df(x, y) is the derivative at input x with output y.
template <typename T, class F, class DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const bool rec = recording<T>({&x});
  return make_result<T>(op, x.shape(), std::move(out), rec, [x, df](TensorImpl<T>& o) {
    auto& gx = grad_buffer(*x.impl());
    const auto& xd = x.impl()->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xd[i], o.data[i]);
  });
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
std::vector<T> transposed(const T* src, std::int64_t rows, std::int64_t cols) {
  std::vector<T> out(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + to_string(s));
  }
}

}  // namespace

// --- elementwise -------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-v * v / 2);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

// --- reductions --------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  const bool rec = recording<T>({&x});
  return make_result<T>("sum", {}, {total}, rec, [x](TensorImpl<T>& o) {
    auto& gx = grad_buffer(*x.impl());
    for (auto& g : gx) g += o.grad[0];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, x.ndim(), "sum");
  const auto sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const auto xv = x.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t l = 0; l < sp.len; ++l) {
      const T* src = xv.data() + (o * sp.len + l) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const bool rec = recording<T>({&x});
  return make_result<T>("sum_axis", out_shape, std::move(out), rec, [x, sp](TensorImpl<T>& o) {
    auto& gx = grad_buffer(*x.impl());
    for (std::int64_t a = 0; a < sp.outer; ++a) {
      for (std::int64_t l = 0; l < sp.len; ++l) {
        T* dst = gx.data() + (a * sp.len + l) * sp.inner;
        const T* g = o.grad.data() + a * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim) {
  const auto len = x.dim(axis);
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(len));
}

// --- layout ------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one -1 in " + to_string(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0 && x.numel() % known == 0) shape[infer] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const bool rec = recording<T>({&x});
  return make_result<T>("reshape", shape, std::move(out), rec, [x](TensorImpl<T>& o) {
    accumulate(grad_buffer(*x.impl()), o.grad);
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order) {
  const int nd = x.ndim();
  if (static_cast<int>(order.size()) != nd) {
    throw DimensionError("permute: order has " + std::to_string(order.size()) +
                         " axes for shape " + to_string(x.shape()));
  }
  std::vector<bool> seen(nd, false);
  for (int a : order) {
    if (a < 0 || a >= nd || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  const auto& in_shape = x.shape();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(nd);
  std::vector<std::int64_t> src_stride(nd);
  for (int d = 0; d < nd; ++d) {
    out_shape[d] = in_shape[order[d]];
    src_stride[d] = in_strides[order[d]];
  }
  // map[i] = input offset of output element i
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  {
    std::vector<std::int64_t> idx(nd, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      (*map)[i] = off;
      for (int d = nd - 1; d >= 0; --d) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        off -= src_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  const bool rec = recording<T>({&x});
  return make_result<T>("permute", out_shape, std::move(out), rec, [x, map](TensorImpl<T>& o) {
    auto& gx = grad_buffer(*x.impl());
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*map)[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int a, int b) {
  const int nd = x.ndim();
  std::vector<int> order(nd);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[normalize_axis(a, nd, "transpose")], order[normalize_axis(b, nd, "transpose")]);
  return permute(x, order);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int nd = parts[0].ndim();
  const int ax = normalize_axis(axis, nd, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = static_cast<int>(s.size()) == nd;
    for (int d = 0; ok && d < nd; ++d) ok = d == ax || s[d] == parts[0].shape()[d];
    if (!ok) {
      throw DimensionError("concat: shape " + to_string(s) + " incompatible with " +
                           to_string(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    out_shape[ax] += s[ax];
  }
  const auto sp = split_at(out_shape, ax);
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t len = p.dim(ax) * sp.inner;
    const auto pv = p.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy(pv.begin() + o * len, pv.begin() + (o + 1) * len,
                out.begin() + o * sp.len * sp.inner + offset);
    }
    offset += len;
  }
  const bool rec = recording<T>(parts);
  return make_result<T>("concat", out_shape, std::move(out), rec, [parts, sp, ax](TensorImpl<T>& o) {
    std::int64_t off = 0;
    for (const auto& p : parts) {
      const std::int64_t len = p.dim(ax) * sp.inner;
      if (p.requires_grad()) {
        auto& gp = grad_buffer(*p.impl());
        for (std::int64_t a = 0; a < sp.outer; ++a) {
          const T* src = o.grad.data() + a * sp.len * sp.inner + off;
          T* dst = gp.data() + a * len;
          for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      off += len;
    }
  });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, x.ndim(), "narrow");
  if (start < 0 || length <= 0 || start + length > x.dim(ax)) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of size " +
                         std::to_string(x.dim(ax)));
  }
  const auto sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  const auto xv = x.data();
  const std::int64_t chunk = length * sp.inner;
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    const auto src = xv.begin() + (o * sp.len + start) * sp.inner;
    std::copy(src, src + chunk, out.begin() + o * chunk);
  }
  const bool rec = recording<T>({&x});
  return make_result<T>("narrow", out_shape, std::move(out), rec,
                        [x, sp, start, chunk](TensorImpl<T>& o) {
                          auto& gx = grad_buffer(*x.impl());
                          for (std::int64_t a = 0; a < sp.outer; ++a) {
                            T* dst = gx.data() + (a * sp.len + start) * sp.inner;
                            const T* src = o.grad.data() + a * chunk;
                            for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, const std::vector<std::int64_t>& sizes) {
  const int ax = normalize_axis(axis, x.ndim(), "split");
  const std::int64_t total = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
  if (total != x.dim(ax)) {
    throw DimensionError("split: sizes sum to " + std::to_string(total) + " but axis has " +
                         std::to_string(x.dim(ax)));
  }
  std::vector<Tensor<T>> out;
  std::int64_t start = 0;
  for (auto s : sizes) {
    out.push_back(narrow(x, ax, start, s));
    start += s;
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> rows) {
  require_rank(x.shape(), 2, "gather_rows", "input");
  const std::int64_t n_rows = x.dim(0), width = x.dim(1);
  for (auto r : rows) {
    if (r < 0 || r >= n_rows) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " +
                           to_string(x.shape()));
    }
  }
  auto idx = std::make_shared<const std::vector<std::int64_t>>(std::move(rows));
  const std::int64_t n = static_cast<std::int64_t>(idx->size());
  std::vector<T> out(static_cast<std::size_t>(n * width));
  const auto xv = x.data();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(xv.begin() + (*idx)[i] * width, xv.begin() + ((*idx)[i] + 1) * width,
              out.begin() + i * width);
  }
  const bool rec = recording<T>({&x});
  return make_result<T>("gather_rows", {n, width}, std::move(out), rec,
                        [x, idx, width](TensorImpl<T>& o) {
                          auto& gx = grad_buffer(*x.impl());
                          for (std::size_t i = 0; i < idx->size(); ++i) {
                            T* dst = gx.data() + (*idx)[i] * width;
                            const T* src = o.grad.data() + i * width;
                            for (std::int64_t j = 0; j < width; ++j) dst[j] += src[j];
                          }
                        });
}

// --- linear algebra ----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::int64_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const auto bc = broadcast_plan(a_batch, b_batch, "matmul");
  Shape out_shape = bc.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::int64_t batches = numel(bc.out);
  std::vector<T> out(static_cast<std::size_t>(batches * m * n));
  const auto av = a.data(), bv = b.data();
  detail::count_flops("matmul", static_cast<std::uint64_t>(2 * batches * m * n * k));

  // A 2-D right operand folds the batch into the row dimension.
  const bool fold = b_batch.empty();
  if (fold) {
    kernels::gemm<T>(batches * m, n, k, av.data(), bv.data(), out.data(), false);
  } else {
    for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      kernels::gemm<T>(m, n, k, av.data() + ia * m * k, bv.data() + ib * k * n,
                       out.data() + i * m * n, false);
    });
  }
  const bool rec = recording<T>({&a, &b});
  return make_result<T>(
      "matmul", out_shape, std::move(out), rec, [a, b, bc, m, n, k, batches, fold](TensorImpl<T>& o) {
        const T* g = o.grad.data();
        const T* ad = a.impl()->data.data();
        const T* bd = b.impl()->data.data();
        if (fold) {
          if (a.requires_grad()) {
            const auto bt = transposed(bd, k, n);
            kernels::gemm<T>(batches * m, k, n, g, bt.data(), grad_buffer(*a.impl()).data(), true);
          }
          if (b.requires_grad()) {
            const auto at = transposed(ad, batches * m, k);
            kernels::gemm<T>(k, n, batches * m, at.data(), g, grad_buffer(*b.impl()).data(), true);
          }
          return;
        }
        for_each_broadcast(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
          if (a.requires_grad()) {
            const auto bt = transposed(bd + ib * k * n, k, n);
            kernels::gemm<T>(m, k, n, g + i * m * n, bt.data(),
                             grad_buffer(*a.impl()).data() + ia * m * k, true);
          }
          if (b.requires_grad()) {
            const auto at = transposed(ad + ia * m * k, m, k);
            kernels::gemm<T>(k, n, m, at.data(), g + i * m * n,
                             grad_buffer(*b.impl()).data() + ib * k * n, true);
          }
        });
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(w.shape(), 2, "linear", "weight");
  const std::int64_t out_f = w.dim(0), in_f = w.dim(1);
  if (x.ndim() < 1 || x.dim(-1) != in_f) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(w.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_f)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(w.shape()));
  }
  const std::int64_t rows = x.numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<T> out(static_cast<std::size_t>(rows * out_f));
  const auto wt = transposed(w.data().data(), out_f, in_f);
  kernels::gemm<T>(rows, out_f, in_f, x.data().data(), wt.data(), out.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < out_f; ++j) out[r * out_f + j] += bv[j];
    }
  }
  detail::count_flops("linear", static_cast<std::uint64_t>(2 * rows * in_f * out_f));
  const bool rec = recording<T>({&x, &w, &bias});
  return make_result<T>("linear", out_shape, std::move(out), rec,
                        [x, w, bias, rows, in_f, out_f](TensorImpl<T>& o) {
                          const T* g = o.grad.data();
                          if (x.requires_grad()) {
                            kernels::gemm<T>(rows, in_f, out_f, g, w.impl()->data.data(),
                                             grad_buffer(*x.impl()).data(), true);
                          }
                          if (w.requires_grad()) {
                            const auto gt = transposed(g, rows, out_f);
                            kernels::gemm<T>(out_f, in_f, rows, gt.data(), x.impl()->data.data(),
                                             grad_buffer(*w.impl()).data(), true);
                          }
                          if (bias.defined() && bias.requires_grad()) {
                            auto& gb = grad_buffer(*bias.impl());
                            for (std::int64_t r = 0; r < rows; ++r) {
                              for (std::int64_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
                            }
                          }
                        });
}

// --- softmax & normalization -------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int ax = normalize_axis(axis, x.ndim(), "softmax");
  const auto sp = split_at(x.shape(), ax);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  kernels::softmax_forward<T>(sp.outer, sp.len, sp.inner, x.data().data(), out.data());
  detail::count_flops("softmax", static_cast<std::uint64_t>(5 * x.numel()));
  const bool rec = recording<T>({&x});
  return make_result<T>("softmax", x.shape(), std::move(out), rec, [x, sp](TensorImpl<T>& o) {
    kernels::softmax_backward<T>(sp.outer, sp.len, sp.inner, o.data.data(), o.grad.data(),
                                 grad_buffer(*x.impl()).data());
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const std::int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta of size " + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()) + " for normalized dim " + std::to_string(d));
  }
  const std::int64_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * d;
    T mu = 0;
    for (std::int64_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const T h = (src[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  detail::count_flops("layer_norm", static_cast<std::uint64_t>(5 * x.numel()));
  const bool rec = recording<T>({&x, &gamma, &beta});
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), rec,
      [x, gamma, beta, xhat, rstd, rows, d](TensorImpl<T>& o) {
        const auto& g = o.grad;
        const auto& gam = gamma.impl()->data;
        if (gamma.requires_grad() || beta.requires_grad()) {
          auto* gg = gamma.requires_grad() ? &grad_buffer(*gamma.impl()) : nullptr;
          auto* gb = beta.requires_grad() ? &grad_buffer(*beta.impl()) : nullptr;
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < d; ++j) {
              if (gg) (*gg)[j] += g[r * d + j] * (*xhat)[r * d + j];
              if (gb) (*gb)[j] += g[r * d + j];
            }
          }
        }
        if (x.requires_grad()) {
          auto& gx = grad_buffer(*x.impl());
          std::vector<T> dh(static_cast<std::size_t>(d));
          for (std::int64_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::int64_t j = 0; j < d; ++j) {
              dh[j] = g[r * d + j] * gam[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * (*xhat)[r * d + j];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            for (std::int64_t j = 0; j < d; ++j) {
              gx[r * d + j] += (*rstd)[r] * (dh[j] - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
  if (!(eps > 0)) throw ConfigError("group_norm: eps must be positive");
  require_rank(x.shape(), 4, "group_norm", "input");
  const std::int64_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (groups <= 0 || ch % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(ch) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.numel() != ch || beta.numel() != ch) {
    throw DimensionError("group_norm: affine size does not match " + std::to_string(ch) +
                         " channels");
  }
  const std::int64_t cpg = ch / groups, count = cpg * plane;
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch * groups));
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const std::int64_t base = (b * ch + gi * cpg) * plane;
      T mu = 0;
      for (std::int64_t i = 0; i < count; ++i) mu += xv[base + i];
      mu /= static_cast<T>(count);
      T var = 0;
      for (std::int64_t i = 0; i < count; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
      var /= static_cast<T>(count);
      const T rs = T(1) / std::sqrt(var + eps);
      (*rstd)[b * groups + gi] = rs;
      for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t c = gi * cpg + i / plane;
        const T h = (xv[base + i] - mu) * rs;
        (*xhat)[base + i] = h;
        out[base + i] = h * gv[c] + bv[c];
      }
    }
  }
  detail::count_flops("group_norm", static_cast<std::uint64_t>(5 * x.numel()));
  const bool rec = recording<T>({&x, &gamma, &beta});
  return make_result<T>(
      "group_norm", x.shape(), std::move(out), rec,
      [x, gamma, beta, xhat, rstd, batch, ch, plane, groups, cpg, count](TensorImpl<T>& o) {
        const auto& g = o.grad;
        const auto& gam = gamma.impl()->data;
        auto* gg = gamma.requires_grad() ? &grad_buffer(*gamma.impl()) : nullptr;
        auto* gb = beta.requires_grad() ? &grad_buffer(*beta.impl()) : nullptr;
        auto* gx = x.requires_grad() ? &grad_buffer(*x.impl()) : nullptr;
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (b * ch + gi * cpg) * plane;
            T mean_dh = 0, mean_dh_h = 0;
            for (std::int64_t i = 0; i < count; ++i) {
              const std::int64_t c = gi * cpg + i / plane;
              const T gi_v = g[base + i];
              if (gg) (*gg)[c] += gi_v * (*xhat)[base + i];
              if (gb) (*gb)[c] += gi_v;
              const T dh = gi_v * gam[c];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[base + i];
            }
            if (!gx) continue;
            mean_dh /= static_cast<T>(count);
            mean_dh_h /= static_cast<T>(count);
            const T rs = (*rstd)[b * groups + gi];
            for (std::int64_t i = 0; i < count; ++i) {
              const std::int64_t c = gi * cpg + i / plane;
              const T dh = g[base + i] * gam[c];
              (*gx)[base + i] += rs * (dh - mean_dh - (*xhat)[base + i] * mean_dh_h);
            }
          }
        }
      });
}

// --- convolution -------------------------------------------------------------

std::int64_t conv_output_size(std::int64_t input, std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding) {
  if (stride <= 0 || padding < 0 || kernel <= 0) {
    throw ConfigError("conv: invalid stride/padding/kernel");
  }
  const std::int64_t padded = input + 2 * padding;
  if (kernel > padded) {
    throw DimensionError("conv: kernel " + std::to_string(kernel) + " exceeds padded input " +
                         std::to_string(padded));
  }
  const std::int64_t span = padded - kernel;
  if (span % stride > padding) {
    throw DimensionError("conv: input " + std::to_string(input) + " with kernel " +
                         std::to_string(kernel) + ", stride " + std::to_string(stride) +
                         ", padding " + std::to_string(padding) +
                         " does not tile exactly (input pixels would be dropped)");
  }
  return span / stride + 1;
}

namespace {

kernels::ConvGeometry conv_geometry(const Shape& xs, std::int64_t kh, std::int64_t kw,
                                    Conv2dOptions opt) {
  kernels::ConvGeometry g{};
  g.channels = xs[1];
  g.height = xs[2];
  g.width = xs[3];
  g.kernel_h = kh;
  g.kernel_w = kw;
  g.stride = opt.stride;
  g.padding = opt.padding;
  g.out_h = conv_output_size(g.height, kh, opt.stride, opt.padding);
  g.out_w = conv_output_size(g.width, kw, opt.stride, opt.padding);
  return g;
}

bool is_pointwise(const kernels::ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dOptions opt) {
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "weight");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: weight " + to_string(w.shape()) + " expects " +
                         std::to_string(w.dim(1)) + " input channels, input is " +
                         to_string(x.shape()));
  }
  const std::int64_t out_ch = w.dim(0);
  if (bias.defined() && bias.numel() != out_ch) {
    throw DimensionError("conv2d: bias size " + std::to_string(bias.numel()) + " for " +
                         std::to_string(out_ch) + " output channels");
  }
  const auto g = conv_geometry(x.shape(), w.dim(2), w.dim(3), opt);
  const std::int64_t batch = x.dim(0);
  const std::int64_t ckk = g.channels * g.kernel_h * g.kernel_w;
  const std::int64_t plane = g.out_h * g.out_w;
  const std::int64_t in_plane = g.channels * g.height * g.width;
  const bool pointwise = is_pointwise(g);

  std::vector<T> out(static_cast<std::size_t>(batch * out_ch * plane));
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ckk * plane));
  const auto xv = x.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* src = xv.data() + b * in_plane;
    if (!pointwise) {
      kernels::im2col<T>(g, src, cols.data());
      src = cols.data();
    }
    kernels::gemm<T>(out_ch, plane, ckk, w.data().data(), src, out.data() + b * out_ch * plane,
                     false);
  }
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t o = 0; o < out_ch; ++o) {
        T* dst = out.data() + (b * out_ch + o) * plane;
        for (std::int64_t p = 0; p < plane; ++p) dst[p] += bv[o];
      }
    }
  }
  detail::count_flops("conv2d", static_cast<std::uint64_t>(2 * batch * out_ch * ckk * plane));
  const bool rec = recording<T>({&x, &w, &bias});
  return make_result<T>(
      "conv2d", {batch, out_ch, g.out_h, g.out_w}, std::move(out), rec,
      [x, w, bias, g, batch, out_ch, ckk, plane, in_plane, pointwise](TensorImpl<T>& o) {
        const T* xd = x.impl()->data.data();
        const T* wd = w.impl()->data.data();
        std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ckk * plane));
        std::vector<T> dcols(static_cast<std::size_t>(ckk * plane));
        const auto wt = transposed(wd, out_ch, ckk);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* gout = o.grad.data() + b * out_ch * plane;
          if (w.requires_grad()) {
            const T* src = xd + b * in_plane;
            if (!pointwise) {
              kernels::im2col<T>(g, src, cols.data());
              src = cols.data();
            }
            const auto st = transposed(src, ckk, plane);
            kernels::gemm<T>(out_ch, ckk, plane, gout, st.data(), grad_buffer(*w.impl()).data(),
                             true);
          }
          if (x.requires_grad()) {
            T* gx = grad_buffer(*x.impl()).data() + b * in_plane;
            if (pointwise) {
              kernels::gemm<T>(ckk, plane, out_ch, wt.data(), gout, gx, true);
            } else {
              kernels::gemm<T>(ckk, plane, out_ch, wt.data(), gout, dcols.data(), false);
              kernels::col2im<T>(g, dcols.data(), gx);
            }
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto& gb = grad_buffer(*bias.impl());
          for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t oc = 0; oc < out_ch; ++oc) {
              const T* src = o.grad.data() + (b * out_ch + oc) * plane;
              for (std::int64_t p = 0; p < plane; ++p) gb[oc] += src[p];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           Conv2dOptions opt) {
  require_rank(x.shape(), 4, "depthwise_conv2d", "input");
  require_rank(w.shape(), 4, "depthwise_conv2d", "weight");
  if (w.dim(0) != x.dim(1) || w.dim(1) != 1) {
    throw DimensionError("depthwise_conv2d: weight " + to_string(w.shape()) +
                         " does not match input " + to_string(x.shape()));
  }
  const std::int64_t ch = x.dim(1);
  if (bias.defined() && bias.numel() != ch) {
    throw DimensionError("depthwise_conv2d: bias size does not match channels");
  }
  const auto g = conv_geometry(x.shape(), w.dim(2), w.dim(3), opt);
  const std::int64_t batch = x.dim(0), plane = g.out_h * g.out_w;
  const std::int64_t in_plane = ch * g.height * g.width;
  std::vector<T> out(static_cast<std::size_t>(batch * ch * plane));
  const auto xv = x.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    kernels::depthwise_forward<T>(g, xv.data() + b * in_plane, w.data().data(),
                                  out.data() + b * ch * plane);
  }
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t c = 0; c < ch; ++c) {
        T* dst = out.data() + (b * ch + c) * plane;
        for (std::int64_t p = 0; p < plane; ++p) dst[p] += bv[c];
      }
    }
  }
  detail::count_flops("depthwise_conv2d", static_cast<std::uint64_t>(
                                              2 * batch * ch * g.kernel_h * g.kernel_w * plane));
  const bool rec = recording<T>({&x, &w, &bias});
  return make_result<T>(
      "depthwise_conv2d", {batch, ch, g.out_h, g.out_w}, std::move(out), rec,
      [x, w, bias, g, batch, ch, plane, in_plane](TensorImpl<T>& o) {
        T* gw = w.requires_grad() ? grad_buffer(*w.impl()).data() : nullptr;
        T* gx = x.requires_grad() ? grad_buffer(*x.impl()).data() : nullptr;
        for (std::int64_t b = 0; b < batch; ++b) {
          kernels::depthwise_backward<T>(g, x.impl()->data.data() + b * in_plane,
                                         w.impl()->data.data(), o.grad.data() + b * ch * plane,
                                         gx ? gx + b * in_plane : nullptr, gw);
        }
        if (bias.defined() && bias.requires_grad()) {
          auto& gb = grad_buffer(*bias.impl());
          for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t c = 0; c < ch; ++c) {
              const T* src = o.grad.data() + (b * ch + c) * plane;
              for (std::int64_t p = 0; p < plane; ++p) gb[c] += src[p];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool", "input");
  const std::int64_t bc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(bc));
  const auto xv = x.data();
  for (std::int64_t i = 0; i < bc; ++i) {
    T total = 0;
    for (std::int64_t p = 0; p < plane; ++p) total += xv[i * plane + p];
    out[i] = total / static_cast<T>(plane);
  }
  const bool rec = recording<T>({&x});
  return make_result<T>("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(out), rec,
                        [x, bc, plane](TensorImpl<T>& o) {
                          auto& gx = grad_buffer(*x.impl());
                          const T inv = T(1) / static_cast<T>(plane);
                          for (std::int64_t i = 0; i < bc; ++i) {
                            for (std::int64_t p = 0; p < plane; ++p) gx[i * plane + p] += o.grad[i] * inv;
                          }
                        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor) {
  require_rank(x.shape(), 4, "upsample_nearest", "input");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const std::int64_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  std::vector<T> out(static_cast<std::size_t>(bc * oh * ow));
  const auto xv = x.data();
  for (std::int64_t i = 0; i < bc; ++i) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        out[(i * oh + y) * ow + xx] = xv[(i * h + y / factor) * w + xx / factor];
      }
    }
  }
  const bool rec = recording<T>({&x});
  return make_result<T>("upsample_nearest", {x.dim(0), x.dim(1), oh, ow}, std::move(out), rec,
                        [x, bc, h, w, oh, ow, factor](TensorImpl<T>& o) {
                          auto& gx = grad_buffer(*x.impl());
                          for (std::int64_t i = 0; i < bc; ++i) {
                            for (std::int64_t y = 0; y < oh; ++y) {
                              for (std::int64_t xx = 0; xx < ow; ++xx) {
                                gx[(i * h + y / factor) * w + xx / factor] +=
                                    o.grad[(i * oh + y) * ow + xx];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& x, const Tensor<T>& coords) {
  require_rank(x.shape(), 4, "bilinear_sample", "input");
  require_rank(coords.shape(), 4, "bilinear_sample", "coords");
  if (coords.dim(0) != x.dim(0) || coords.dim(1) != 2) {
    throw DimensionError("bilinear_sample: coords " + to_string(coords.shape()) +
                         " must be [B, 2, H', W'] for input " + to_string(x.shape()));
  }
  const std::int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = coords.dim(2), ow = coords.dim(3), points = oh * ow;
  std::vector<T> out(static_cast<std::size_t>(batch * ch * points));
  const auto xv = x.data(), cv = coords.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* ys = cv.data() + b * 2 * points;
    kernels::bilinear_forward<T>(ch, h, w, points, xv.data() + b * ch * h * w, ys, ys + points,
                                 out.data() + b * ch * points);
  }
  detail::count_flops("bilinear_sample", static_cast<std::uint64_t>(8 * batch * ch * points));
  const bool rec = recording<T>({&x, &coords});
  return make_result<T>(
      "bilinear_sample", {batch, ch, oh, ow}, std::move(out), rec,
      [x, coords, batch, ch, h, w, points](TensorImpl<T>& o) {
        T* gx = x.requires_grad() ? grad_buffer(*x.impl()).data() : nullptr;
        T* gc = coords.requires_grad() ? grad_buffer(*coords.impl()).data() : nullptr;
        const T* cd = coords.impl()->data.data();
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* ys = cd + b * 2 * points;
          T* gys = gc ? gc + b * 2 * points : nullptr;
          kernels::bilinear_backward<T>(ch, h, w, points, x.impl()->data.data() + b * ch * h * w,
                                        ys, ys + points, o.grad.data() + b * ch * points,
                                        gx ? gx + b * ch * h * w : nullptr, gys,
                                        gys ? gys + points : nullptr);
        }
      });
}

template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& parts, const Tensor<T>& weights) {
  if (parts.empty()) throw DimensionError("weighted_sum: no inputs");
  if (weights.ndim() != 1 || weights.dim(0) != static_cast<std::int64_t>(parts.size())) {
    throw DimensionError("weighted_sum: weights " + to_string(weights.shape()) + " for " +
                         std::to_string(parts.size()) + " parts");
  }
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw DimensionError("weighted_sum: part shape " + to_string(p.shape()) + " differs from " +
                           to_string(parts[0].shape()));
    }
  }
  const std::int64_t n = parts[0].numel();
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  const auto wv = weights.data();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    const T wk = wv[k];
    for (std::int64_t i = 0; i < n; ++i) out[i] += wk * pv[i];
  }
  detail::count_flops("weighted_sum", static_cast<std::uint64_t>(2 * parts.size() * n));
  std::vector<Tensor<T>> inputs = parts;
  inputs.push_back(weights);
  const bool rec = recording<T>(inputs);
  return make_result<T>("weighted_sum", parts[0].shape(), std::move(out), rec,
                        [parts, weights, n](TensorImpl<T>& o) {
                          const auto& g = o.grad;
                          const auto& wd = weights.impl()->data;
                          for (std::size_t k = 0; k < parts.size(); ++k) {
                            if (parts[k].requires_grad()) {
                              auto& gp = grad_buffer(*parts[k].impl());
                              for (std::int64_t i = 0; i < n; ++i) gp[i] += wd[k] * g[i];
                            }
                          }
                          if (weights.requires_grad()) {
                            auto& gw = grad_buffer(*weights.impl());
                            for (std::size_t k = 0; k < parts.size(); ++k) {
                              const auto& pd = parts[k].impl()->data;
                              T dot = 0;
                              for (std::int64_t i = 0; i < n; ++i) dot += g[i] * pd[i];
                              gw[k] += dot;
                            }
                          }
                        });
}

#define CITNET_OPS_INSTANTIATE(T)                                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&, int, bool);                                           \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&, int, bool);                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                         \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                 \
  template Tensor<T> narrow(const Tensor<T>&, int, std::int64_t, std::int64_t);                  \
  template std::vector<Tensor<T>> split(const Tensor<T>&, int, const std::vector<std::int64_t>&); \
  template Tensor<T> gather_rows(const Tensor<T>&, std::vector<std::int64_t>);                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> softmax(const Tensor<T>&, int);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> group_norm(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions); \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      Conv2dOptions);                                            \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                          \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::int64_t);                           \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> weighted_sum(const std::vector<Tensor<T>>&, const Tensor<T>&);

CITNET_OPS_INSTANTIATE(float)
CITNET_OPS_INSTANTIATE(double)

}  // namespace citnet
