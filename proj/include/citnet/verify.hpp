#pragma once

// Named invariant checks shared by `citnet verify` and the acceptance runner.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "citnet/citnet.hpp"
#include "citnet/config.hpp"

namespace citnet::verify {

namespace tol {
inline constexpr double ddconv_vs_conv = 1e-6;   // max abs, 64-bit
inline constexpr double row_sum = 1e-6;
inline constexpr double masked_weight = 1e-8;
inline constexpr double lambda_grad = 1e-9;      // relative
inline constexpr double grad_rel = 1e-4;
inline constexpr double grad_rel_end_to_end = 1e-3;
inline constexpr double size_factor = 2.0;
inline constexpr double learn_dice = 0.95;
inline constexpr std::int64_t learn_steps = 300;
}  // namespace tol

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Report {
  std::vector<Check> checks;
  bool passed() const;
  Json to_json() const;
};

/// Runs `fn`, timing it; an exception counts as a failure with its message.
Check run_check(const std::string& name, const std::function<Outcome()>& fn);

/// Structural invariants of a built model: relative position tables sized
/// (2M-1)^2 x heads, four lambdas per attention layer, DDConv bank and head
/// shapes, finite parameters, no storage shared between registry entries.
template <typename T>
std::vector<Check> check_model(const CiTNet<T>& model);

// Individual checks. Seeds pick the random cases.
Outcome closed_forms();                 // Omega values at (56, 56, 96, 7)
Outcome omega_ordering();               // W-ACAM < W-MSA < MSA over the sweep
Outcome omega_scaling();                // doubling C: x4 on C^2 terms, x2 on linear terms
Outcome ddconv_reduces_to_conv(std::uint64_t seed, int cases = 20);
Outcome window_roundtrip(std::uint64_t seed);
Outcome mask_matches_regions();         // mask vs brute-force region labelling
Outcome attention_rows(std::uint64_t seed);
Outcome mask_suppression(std::uint64_t seed);
Outcome fuse_selects_branch(std::uint64_t seed);
Outcome lambda_gradient(std::uint64_t seed);
Outcome block_identity(std::uint64_t seed);
Outcome block_order();
Outcome lpm_economy();
Outcome flops_match_counter(const ModelConfig& cfg);
Outcome forward_shapes(const ModelConfig& cfg, std::uint64_t seed);
Outcome paper_sizes();

/// Finite-difference oracle for one operator at 64-bit. `op` is one of
/// grad_ops(); "end_to_end" runs the micro model.
Outcome grad_op(const std::string& op, std::uint64_t seed);
const std::vector<std::string>& grad_ops();

/// Toy overfit run, repeated to confirm the history is reproducible.
Outcome learnability(std::uint64_t seed);

enum class Level { Fast, Full };
Level parse_level(const std::string& s);

/// fast: closed forms, reductions, attention and block invariants, structural
/// checks of the model built from `cfg`. full: adds every gradient oracle.
Report run_suite(const ModelConfig& cfg, Level level, std::uint64_t seed);

}  // namespace citnet::verify
