#include "citnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "citnet/ops.hpp"

namespace citnet {

namespace {

std::vector<std::int64_t> pick_elements(std::int64_t n, std::size_t limit, Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || idx.size() <= limit) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const NamedTensors& inputs,
                           const GradCheckOptions& opt) {
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    for (const auto& [name, t] : inputs) {
      t.impl()->requires_grad = true;
      t.impl()->grad.clear();
    }
    const Tensor<double> loss = f();
    if (loss.numel() != 1) {
      throw UsageError("grad_check: f must return a scalar, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw UsageError("grad_check: f does not depend on any checked input");
    }
    tape.backward(loss);
    for (const auto& [name, t] : inputs) {
      analytic.push_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                      : std::vector<double>(t.numel(), 0.0));
    }
  }

  GradCheckReport report;
  Rng rng(opt.seed);
  NoGradScope<double> no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& [name, t] = inputs[k];
    GradCheckEntry entry{name};
    auto data = t.mutable_data();
    for (std::int64_t i : pick_elements(t.numel(), opt.max_elements, rng)) {
      const double saved = data[i];
      data[i] = saved + opt.h;
      const double fp = f().item();
      data[i] = saved - opt.h;
      const double fm = f().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2 * opt.h);
      const double a = analytic[k][i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++entry.checked;
      if (err > entry.max_rel_err || entry.worst_index < 0) {
        entry.max_rel_err = std::max(entry.max_rel_err, err);
        if (err >= entry.max_rel_err) entry.worst_index = i;
      }
    }
    if (entry.max_rel_err >= report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_input = name;
    }
    report.inputs.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err < opt.tol;
  return report;
}

Tensor<double> random_projection(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  const auto r = Tensor<double>::uniform(y.shape(), rng, -1.0, 1.0);
  return sum(mul(y, r));
}

}  // namespace citnet
