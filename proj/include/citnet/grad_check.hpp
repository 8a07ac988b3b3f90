#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "citnet/tensor.hpp"

namespace citnet {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-6;
  // Denominator floor for the relative error, so gradients that are zero in
  // both routes compare on an absolute scale.
  double floor = 1e-3;
  // Check at most this many elements per input (0 = all), chosen by seed.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string input;
  double max_rel_err = 0;
  std::int64_t worst_index = -1;
  std::int64_t checked = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_input;
  std::vector<GradCheckEntry> inputs;
  bool passed = false;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

/// Compares reverse-mode gradients of the scalar f() against central
/// differences (f(x+h) - f(x-h)) / 2h for every element of every input.
/// rel err = |a - n| / max(|a|, |n|, floor). f must read the inputs it is
/// given; they are perturbed in place and restored.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const NamedTensors& inputs,
                           const GradCheckOptions& opt = {});

/// sum(y * r) for a fixed random r, turning any output into a scalar with a
/// generic upstream gradient.
Tensor<double> random_projection(const Tensor<double>& y, std::uint64_t seed);

}  // namespace citnet
