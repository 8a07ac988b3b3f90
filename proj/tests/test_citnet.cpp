#include "citnet/citnet.hpp"
#include "citnet/verify.hpp"
#include "helpers.hpp"

namespace citnet {
namespace {

std::vector<std::int64_t> column(const std::vector<StageInfo>& plan, std::int64_t StageInfo::*f) {
  std::vector<std::int64_t> out;
  for (const auto& s : plan) out.push_back(s.*f);
  return out;
}

using V = std::vector<std::int64_t>;

TEST(Config, StagePlansOfThePublishedVariants) {
  const auto t = ModelConfig::preset("T").plan();
  EXPECT_EQ(column(t, &StageInfo::resolution), (V{56, 28, 14, 7, 14, 28, 56}));
  EXPECT_EQ(column(t, &StageInfo::channels), (V{96, 192, 384, 768, 384, 192, 96}));
  EXPECT_EQ(column(t, &StageInfo::layers), (V{2, 2, 6, 2, 6, 2, 2}));
  EXPECT_EQ(column(t, &StageInfo::heads), (V{3, 6, 12, 24, 12, 6, 3}));
  EXPECT_EQ(column(t, &StageInfo::shift), (V{3, 3, 3, 0, 3, 3, 3}));
  const auto b = ModelConfig::preset("B").plan();
  EXPECT_EQ(column(b, &StageInfo::layers), (V{2, 2, 18, 2, 18, 2, 2}));
  EXPECT_EQ(column(b, &StageInfo::heads), (V{4, 8, 16, 32, 16, 8, 4}));
  EXPECT_EQ(column(b, &StageInfo::channels), (V{96, 192, 384, 768, 384, 192, 96}));
}

void expect_config_error(const Json& patch, const std::string& field) {
  try {
    ModelConfig::from_json(patch, ModelConfig::preset("T")).validate();
    FAIL() << "accepted " << patch.dump();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind(field, 0), 0u) << e.what();
  }
}

TEST(Config, ValidationNamesTheField) {
  expect_config_error({{"window", 5}}, "window");
  expect_config_error({{"embed_dim", 100}}, "embed_dim");
  expect_config_error({{"layers", {2, 2, 5, 2, 6, 2, 2}}}, "layers");
  expect_config_error({{"heads", {5, 6, 12, 24, 12, 6, 3}}}, "heads");
  expect_config_error({{"patch_size", 3}}, "patch_size");
  expect_config_error({{"ddconv_banks", 0}}, "ddconv_banks");
  EXPECT_THROW(ModelConfig::from_json({{"windw", 7}}), ConfigError);
  EXPECT_THROW(ModelConfig::from_json({{"window", "seven"}}), ConfigError);
  EXPECT_THROW(ModelConfig::preset("XL"), ConfigError);
}

TEST(Config, JsonRoundTripIsCanonical) {
  for (const char* v : {"T", "B", "toy", "gradcheck"}) {
    const auto cfg = ModelConfig::preset(v);
    const auto text = canonical_dump(cfg.to_json());
    const auto back = ModelConfig::from_json(Json::parse(text));
    EXPECT_EQ(canonical_dump(back.to_json()), text);
    EXPECT_EQ(text.back(), '\n');
  }
  const auto j = ModelConfig::preset("toy").to_json();
  EXPECT_EQ(j.begin().key(), "branches");  // keys sorted
}

class MicroModel : public ::testing::Test {
 protected:
  ModelConfig cfg_ = ModelConfig::preset("gradcheck");
};

TEST_F(MicroModel, StructureChecksPass) {
  const CiTNet<float> model(cfg_, 1);
  for (const auto& c : verify::check_model(model)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  const auto o = verify::forward_shapes(cfg_, 1);
  EXPECT_TRUE(o.passed) << o.detail;
}

TEST_F(MicroModel, CorruptedPositionTableFailsItsInvariant) {
  CiTNet<float> model(cfg_, 1);
  model.stages[2][0].attn2.rpb = Tensor<float>::zeros({5, 1});
  bool found = false;
  for (const auto& c : verify::check_model(model)) {
    if (c.name != "wacam.rpb_shape") continue;
    found = true;
    EXPECT_FALSE(c.passed);
    EXPECT_NE(c.detail.find("trans.wacam.2.1.rpb"), std::string::npos) << c.detail;
  }
  EXPECT_TRUE(found);
}

TEST_F(MicroModel, RegistryNamesAndNoSharing) {
  const CiTNet<float> model(cfg_, 1);
  const auto params = model.params();
  std::set<std::string> names;
  for (const auto& [n, t] : params) EXPECT_TRUE(names.insert(n).second) << "duplicate " << n;
  for (const char* n : {"embed.proj.weight", "embed.norm.gamma", "trans.wacam.0.0.rpb",
                        "trans.wacam.0.1.lambda", "trans.block.3.0.lpm1.cheap.weight",
                        "trans.merge.0.reduce.weight", "trans.expand.3.expand.weight",
                        "trans.cross.4.weight", "trans.head.expand.weight",
                        "cnn.stage.0.unit0.ddconv.banks.3", "cnn.stage.6.unit1.norm.gamma",
                        "cnn.cross.5.weight", "cnn.head.weight", "fuse.weight"}) {
    EXPECT_TRUE(names.count(n)) << n;
  }
  EXPECT_TRUE(model.audit_sharing().empty());
}

TEST_F(MicroModel, DeterministicPerSeed) {
  const CiTNet<float> a(cfg_, 7), b(cfg_, 7), c(cfg_, 8);
  Rng rng(1);
  const auto x = Tensor<float>::uniform({2, 1, 32, 32}, rng, 0, 1);
  NoGradScope<float> off;
  const auto ya = a.forward(x), yb = b.forward(x), yc = c.forward(x);
  EXPECT_TRUE(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
  EXPECT_FALSE(std::equal(ya.data().begin(), ya.data().end(), yc.data().begin()));
}

TEST_F(MicroModel, AblationsBuildAndRun) {
  Rng rng(2);
  const auto x = Tensor<float>::uniform({1, 1, 32, 32}, rng, 0, 1);
  NoGradScope<float> off;
  const auto base = CiTNet<float>(cfg_, 3).forward(x);
  auto variants = std::vector<ModelConfig>(5, cfg_);
  variants[0].cross_feed = false;
  variants[1].deformable = false;
  variants[1].ddconv_banks = 1;
  variants[2].static_alpha = true;
  variants[3].lightweight_mlp = false;
  variants[4].branches = {true, false, true, false};
  for (const auto& v : variants) {
    const auto y = CiTNet<float>(v, 3).forward(x);
    EXPECT_EQ(y.shape(), base.shape());
    for (float f : y.data()) ASSERT_TRUE(std::isfinite(f));
  }
  const auto no_feed = CiTNet<float>(variants[0], 3).forward(x);
  EXPECT_FALSE(std::equal(base.data().begin(), base.data().end(), no_feed.data().begin()));
}

TEST_F(MicroModel, RejectsMismatchedInputs) {
  const CiTNet<float> model(cfg_, 1);
  Rng rng(3);
  NoGradScope<float> off;
  EXPECT_THROW(model.forward(Tensor<float>::uniform({1, 1, 30, 30}, rng, 0, 1)), DimensionError);
  EXPECT_THROW(model.forward(Tensor<float>::uniform({1, 3, 32, 32}, rng, 0, 1)), DimensionError);
}

TEST_F(MicroModel, EndToEndGradients) {
  const auto o = verify::grad_op("end_to_end", 1);
  EXPECT_TRUE(o.passed) << o.detail;
}

}  // namespace
}  // namespace citnet
