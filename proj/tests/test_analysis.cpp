#include "citnet/analysis.hpp"
#include "citnet/citnet.hpp"
#include "citnet/verify.hpp"
#include "helpers.hpp"

namespace citnet::analysis {
namespace {

TEST(Rational, ReducesAndAdds) {
  const Rational a(2, 4);
  EXPECT_EQ(a.num(), 1);
  EXPECT_EQ(a.den(), 2);
  EXPECT_EQ(a + Rational(1, 3), Rational(5, 6));
  EXPECT_EQ(Rational(3, 4) * Rational(8, 3), Rational(2));
  EXPECT_TRUE((Rational(6, 3)).is_integer());
  EXPECT_TRUE(Rational(1, 3) < Rational(1, 2));
  EXPECT_EQ(Rational(7, 2).str(), "7/2");
  EXPECT_EQ(Rational(9).str(), "9");
}

TEST(Rational, RejectsOverflowAndBadInput) {
  const Rational big(std::int64_t{1} << 62);
  EXPECT_THROW(big * Rational(4), std::overflow_error);
  EXPECT_THROW(big + big, std::overflow_error);
  EXPECT_THROW(Rational(1, 0), std::invalid_argument);
  EXPECT_THROW(Rational(-1, 2), std::invalid_argument);
}

TEST(Omega, ClosedFormsAtTheFirstStage) {
  EXPECT_EQ(omega_msa(56, 56, 96).total(), Rational(2003828736));
  EXPECT_EQ(omega_wmsa(56, 56, 96, 7).total(), Rational(145108992));
  EXPECT_EQ(omega_wacam(56, 56, 96, 7).total(), Rational(21977088));
  EXPECT_EQ(omega_wacam(56, 56, 96, 7).quadratic, Rational(7225344));
  // hwC^2/4 keeps its fraction when hwC^2 is not a multiple of 4.
  EXPECT_EQ(omega_wacam(1, 1, 3, 1).quadratic, Rational(9, 4));
  EXPECT_THROW(omega_msa(0, 4, 4), ConfigError);
}

TEST(Omega, OrderingAndScalingChecks) {
  for (auto* fn : {verify::closed_forms, verify::omega_ordering, verify::omega_scaling}) {
    const auto o = fn();
    EXPECT_TRUE(o.passed) << o.detail;
  }
}

TEST(Omega, ScalingIsExact) {
  for (std::int64_t c : {8, 96, 384}) {
    const auto a = omega_wacam(28, 28, c, 7), b = omega_wacam(28, 28, 2 * c, 7);
    EXPECT_EQ(b.quadratic, a.quadratic * Rational(4));
    EXPECT_EQ(b.linear, a.linear * Rational(2));
    const auto m = omega_msa(28, 28, c), m2 = omega_msa(28, 28, 2 * c);
    EXPECT_EQ(m2.quadratic, m.quadratic * Rational(4));
    EXPECT_EQ(m2.linear, m.linear * Rational(2));
  }
}

TEST(Params, CompactProjectionAtC96) {
  Rng rng(1);
  WacamOptions opt;
  opt.dim = 96;
  opt.window = 7;
  opt.heads = 3;
  const Wacam<float> w(opt, 56, 56, rng);
  EXPECT_EQ(w.compact.weight.numel() + w.compact.bias.numel(), 1164);
}

TEST(Tally, AccumulatesBothViews) {
  Tally t;
  t.add("a", "s0", 2);
  t.add("a", "s1", 3);
  t.add("b", "s0", 5);
  EXPECT_EQ(t.total, 10);
  EXPECT_EQ(t.by_module.at("a"), 5);
  EXPECT_EQ(t.by_stage.at("s0"), 7);
}

TEST(WacamMacs, SplitsSumToTotal) {
  const auto m = wacam_macs(16, 16, 64, 4, 2);
  EXPECT_GT(m.spatial, 0);
  EXPECT_GT(m.channel, 0);
  EXPECT_GT(m.cross, 0);
  EXPECT_EQ(m.total(), m.projections + m.spatial + m.channel + m.cross);
  // Compact C -> C/8 and back, once per token.
  EXPECT_EQ(m.projections, 2 * 16 * 16 * 64 * 8);
}

ModelConfig micro(void (*tweak)(ModelConfig&)) {
  auto cfg = ModelConfig::preset("gradcheck");
  tweak(cfg);
  cfg.validate();
  return cfg;
}

TEST(Counting, AnalyticMatchesCounterAcrossAblations) {
  const std::vector<std::pair<const char*, ModelConfig>> cases = {
      {"gradcheck", micro([](ModelConfig&) {})},
      {"static_alpha", micro([](ModelConfig& c) { c.static_alpha = true; })},
      {"plain_conv", micro([](ModelConfig& c) { c.deformable = false; c.ddconv_banks = 1; })},
      {"dense_mlp", micro([](ModelConfig& c) { c.lightweight_mlp = false; })},
      {"two_branches", micro([](ModelConfig& c) { c.branches = {true, false, false, true}; })},
      {"no_cross_feed", micro([](ModelConfig& c) { c.cross_feed = false; })},
      {"two_classes", micro([](ModelConfig& c) { c.n_classes = 2; c.in_channels = 3; })},
  };
  for (const auto& [name, cfg] : cases) {
    const auto o = verify::flops_match_counter(cfg);
    EXPECT_TRUE(o.passed) << name << ": " << o.detail;
  }
}

TEST(Counting, BatchScalesLinearly) {
  const auto cfg = ModelConfig::preset("gradcheck");
  EXPECT_DOUBLE_EQ(count_flops(cfg, 3).total, 3 * count_flops(cfg, 1).total);
}

TEST(Counting, ToyPresetMatchesCounter) {
  const auto o = verify::flops_match_counter(ModelConfig::preset("toy"));
  EXPECT_TRUE(o.passed) << o.detail;
}

TEST(Counting, CategoriesCoverTheRegistry) {
  const auto cfg = ModelConfig::preset("gradcheck");
  const auto t = count_params(cfg);
  double sum = 0;
  for (const auto& [k, v] : t.by_module) sum += v;
  EXPECT_EQ(sum, t.total);
  EXPECT_EQ(t.total, static_cast<double>(CiTNet<float>(cfg, 0).param_count()));
  EXPECT_FALSE(t.by_module.count("other")) << "unclassified parameters";
}

TEST(Report, FieldsAndPaperComparison) {
  const auto cfg = ModelConfig::preset("T");
  const auto r = complexity_report(cfg);
  for (const char* k : {"config", "stage_plan", "params", "flops", "omega", "deviation_ledger", "paper"}) {
    EXPECT_TRUE(r.contains(k)) << k;
  }
  EXPECT_EQ(r.at("stage_plan").size(), 7u);
  EXPECT_DOUBLE_EQ(r.at("paper").at("params_m").get<double>(), 11.58);
  EXPECT_DOUBLE_EQ(r.at("paper").at("gflops").get<double>(), 4.53);
  EXPECT_EQ(r.at("omega").at(0).at("wacam").get<std::string>(), "21977088");
  const auto text = format_report(r);
  EXPECT_NE(text.find("11.58"), std::string::npos);

  PaperTarget p;
  EXPECT_TRUE(paper_target("B", p));
  EXPECT_DOUBLE_EQ(p.params_m, 21.24);
  EXPECT_DOUBLE_EQ(p.gflops, 13.29);
  EXPECT_FALSE(paper_target("toy", p));
  EXPECT_FALSE(complexity_report(ModelConfig::preset("toy")).contains("paper"));
}

}  // namespace
}  // namespace citnet::analysis
