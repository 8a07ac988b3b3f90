#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "citnet/grad_check.hpp"
#include "citnet/ops.hpp"

namespace citnet::testing {

using TD = Tensor<double>;
using TF = Tensor<float>;

inline TD rand_d(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return TD::uniform(s, rng, lo, hi);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

/// Runs grad_check on sum(f(inputs) * R) and asserts the bound.
template <class F>
GradCheckReport check_grads(F f, const NamedTensors& inputs, double tol, std::uint64_t seed = 1,
                            std::size_t max_elements = 0) {
  GradCheckOptions opt;
  opt.tol = tol;
  opt.seed = seed;
  opt.max_elements = max_elements;
  auto report = grad_check([&] { return random_projection(f(), seed + 100); }, inputs, opt);
  EXPECT_TRUE(report.passed) << "worst input " << report.worst_input << " rel err "
                             << report.max_rel_err;
  return report;
}

}  // namespace citnet::testing
