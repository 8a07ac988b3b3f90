#include <omp.h>

#include "citnet/kernels.hpp"
#include "helpers.hpp"

namespace citnet {
namespace {

namespace k = kernels;

template <typename T>
std::vector<T> random_vec(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

template <typename T>
class KernelAgreement : public ::testing::Test {};
using Types = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelAgreement, Types);

template <typename T>
double tol() {
  return std::is_same_v<T, float> ? 2e-4 : 1e-12;
}

TYPED_TEST(KernelAgreement, Gemm) {
  using T = TypeParam;
  Rng rng(1);
  struct Case { std::int64_t m, n, k; };
  for (const Case c : {Case{1, 1, 1}, Case{5, 7, 3}, Case{6, 32, 256}, Case{37, 70, 300},
                       Case{130, 129, 513}, Case{64, 200, 17}}) {
    const auto a = random_vec<T>(c.m * c.k, rng), b = random_vec<T>(c.k * c.n, rng);
    for (bool acc : {false, true}) {
      auto c1 = random_vec<T>(c.m * c.n, rng), c2 = c1;
      k::serial::gemm<T>(c.m, c.n, c.k, a.data(), b.data(), c1.data(), acc);
      k::parallel::gemm<T>(c.m, c.n, c.k, a.data(), b.data(), c2.data(), acc);
      EXPECT_LT(max_diff(c1, c2), tol<T>() * std::sqrt(double(c.k))) << c.m << "x" << c.n << "x" << c.k;
    }
  }
}

TYPED_TEST(KernelAgreement, Im2colAndCol2im) {
  using T = TypeParam;
  Rng rng(2);
  for (std::int64_t stride : {1, 2}) {
    const std::int64_t out = (13 + 2 - 3) / stride + 1;
    const k::ConvGeometry g{40, 13, 13, 3, 3, stride, 1, out, out};
    const auto x = random_vec<T>(40 * 13 * 13, rng);
    std::vector<T> c1(40 * 9 * out * out), c2(c1.size());
    k::serial::im2col<T>(g, x.data(), c1.data());
    k::parallel::im2col<T>(g, x.data(), c2.data());
    EXPECT_EQ(c1, c2);
    std::vector<T> g1(x.size()), g2(x.size());
    k::serial::col2im<T>(g, c1.data(), g1.data());
    k::parallel::col2im<T>(g, c1.data(), g2.data());
    EXPECT_LT(max_diff(g1, g2), tol<T>());
  }
}

TYPED_TEST(KernelAgreement, Bilinear) {
  using T = TypeParam;
  Rng rng(3);
  const std::int64_t c = 12, h = 9, w = 11, p = 5000;
  const auto x = random_vec<T>(c * h * w, rng);
  const auto ys = random_vec<T>(p, rng, -2, h + 1), xs = random_vec<T>(p, rng, -2, w + 1);
  std::vector<T> o1(c * p), o2(c * p);
  k::serial::bilinear_forward<T>(c, h, w, p, x.data(), ys.data(), xs.data(), o1.data());
  k::parallel::bilinear_forward<T>(c, h, w, p, x.data(), ys.data(), xs.data(), o2.data());
  EXPECT_LT(max_diff(o1, o2), tol<T>());
  const auto go = random_vec<T>(c * p, rng);
  std::vector<T> gx1(x.size()), gx2(x.size()), gy1(p), gy2(p), gw1(p), gw2(p);
  k::serial::bilinear_backward<T>(c, h, w, p, x.data(), ys.data(), xs.data(), go.data(), gx1.data(), gy1.data(), gw1.data());
  k::parallel::bilinear_backward<T>(c, h, w, p, x.data(), ys.data(), xs.data(), go.data(), gx2.data(), gy2.data(), gw2.data());
  EXPECT_LT(max_diff(gx1, gx2), 10 * tol<T>());
  EXPECT_LT(max_diff(gy1, gy2), 10 * tol<T>());
  EXPECT_LT(max_diff(gw1, gw2), 10 * tol<T>());
}

TYPED_TEST(KernelAgreement, DepthwiseAndSoftmax) {
  using T = TypeParam;
  Rng rng(4);
  const k::ConvGeometry g{20, 10, 10, 3, 3, 1, 1, 10, 10};
  const auto x = random_vec<T>(20 * 100, rng), w = random_vec<T>(20 * 9, rng);
  std::vector<T> y1(20 * 100), y2(y1.size());
  k::serial::depthwise_forward<T>(g, x.data(), w.data(), y1.data());
  k::parallel::depthwise_forward<T>(g, x.data(), w.data(), y2.data());
  EXPECT_LT(max_diff(y1, y2), tol<T>());
  const auto go = random_vec<T>(y1.size(), rng);
  std::vector<T> gx1(x.size()), gx2(x.size()), gw1(w.size()), gw2(w.size());
  k::serial::depthwise_backward<T>(g, x.data(), w.data(), go.data(), gx1.data(), gw1.data());
  k::parallel::depthwise_backward<T>(g, x.data(), w.data(), go.data(), gx2.data(), gw2.data());
  EXPECT_LT(max_diff(gx1, gx2), tol<T>());
  EXPECT_LT(max_diff(gw1, gw2), 10 * tol<T>());

  for (std::int64_t inner : {1, 7}) {
    const auto s = random_vec<T>(30 * 49 * inner, rng, -5, 5);
    std::vector<T> p1(s.size()), p2(s.size());
    k::serial::softmax_forward<T>(30, 49, inner, s.data(), p1.data());
    k::parallel::softmax_forward<T>(30, 49, inner, s.data(), p2.data());
    EXPECT_LT(max_diff(p1, p2), tol<T>());
    std::vector<T> b1(s.size()), b2(s.size());
    k::serial::softmax_backward<T>(30, 49, inner, p1.data(), go.data(), b1.data());
    k::parallel::softmax_backward<T>(30, 49, inner, p1.data(), go.data(), b2.data());
    EXPECT_LT(max_diff(b1, b2), tol<T>());
  }
}

TEST(KernelDispatch, BackendSwitchAndThreadCountKeepResults) {
  Rng rng(5);
  const auto a = testing::rand_d({70, 300}, rng), b = testing::rand_d({300, 90}, rng);
  const auto ref = matmul(a, b);
  k::set_backend(k::Backend::Serial);
  const auto serial = matmul(a, b);
  k::set_backend(k::Backend::Parallel);
  EXPECT_LT(testing::max_abs_diff(ref.data(), serial.data()), 1e-11);
  const int threads = k::num_threads();
  k::set_num_threads(3);
  const auto three = matmul(a, b);
  k::set_num_threads(threads);
  EXPECT_TRUE(std::equal(ref.data().begin(), ref.data().end(), three.data().begin()));
}

}  // namespace
}  // namespace citnet
