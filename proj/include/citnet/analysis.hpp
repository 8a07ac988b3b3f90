#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "citnet/config.hpp"

namespace citnet::analysis {

/// Exact non-negative rational with 64-bit parts; arithmetic throws on overflow.
class Rational {
 public:
  Rational(std::int64_t num = 0, std::int64_t den = 1);
  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  bool is_integer() const { return den_ == 1; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  std::string str() const;

  friend Rational operator+(const Rational& a, const Rational& b);
  friend Rational operator*(const Rational& a, const Rational& b);
  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator<(const Rational& a, const Rational& b);

 private:
  std::int64_t num_, den_;
};

/// An attention complexity split into its C^2 and C-linear parts.
struct Omega {
  Rational quadratic;  // terms in C^2
  Rational linear;     // terms linear in C
  Rational total() const { return quadratic + linear; }
};

/// 4hwC^2 + 2(hw)^2 C
Omega omega_msa(std::int64_t h, std::int64_t w, std::int64_t c);
/// 4hwC^2 + 2M^2 hwC
Omega omega_wmsa(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t m);
/// hwC^2/4 + M^2 hwC
Omega omega_wacam(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t m);

/// Totals broken down by module category and by stage.
struct Tally {
  std::map<std::string, double> by_module;
  std::map<std::string, double> by_stage;
  double total = 0;
  void add(const std::string& module, const std::string& stage, double value);
};

/// Multiply-accumulate counts of one W-ACAM layer, split the way the report
/// compares them with the closed-form estimate.
struct WacamMacs {
  std::int64_t projections = 0;  // compact C -> C/8 and output C/8 -> C
  std::int64_t spatial = 0;
  std::int64_t channel = 0;
  std::int64_t cross = 0;        // both cross branches
  std::int64_t total() const { return projections + spatial + channel + cross; }
};

WacamMacs wacam_macs(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t window,
                     std::int64_t heads);

/// Parameter count per category from a model's registry.
Tally count_params(const ModelConfig& cfg);

/// Forward FLOPs (2 per MAC; softmax and norms 5 per element; bilinear sampling
/// 4 MACs per sample) for a batch of `batch` images, derived from the
/// configuration alone. Matches a FlopCounter wrapped around the forward pass.
Tally count_flops(const ModelConfig& cfg, std::int64_t batch = 1);

struct PaperTarget {
  double params_m = 0;
  double gflops = 0;
};
/// Reported sizes of the two published variants, if `variant` is one of them.
bool paper_target(const std::string& variant, PaperTarget& out);

/// Machine-readable report: stage plan, parameter and FLOP tallies,
/// closed-form attention estimates per stage, and the comparison with the
/// published sizes.
Json complexity_report(const ModelConfig& cfg);
/// Human-readable rendering of complexity_report().
std::string format_report(const Json& report);

}  // namespace citnet::analysis
