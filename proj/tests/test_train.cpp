#include <filesystem>

#include "citnet/citnet.hpp"
#include "citnet/io.hpp"
#include "citnet/train.hpp"
#include "helpers.hpp"

namespace citnet::train {
namespace {

using citnet::testing::TD;

TD half_ones() {
  std::vector<double> g(16, 0.0);
  std::fill(g.begin(), g.begin() + 8, 1.0);
  return TD::from({1, 1, 4, 4}, g);
}

TEST(Loss, DiceOfUniformHalfPrediction) {
  const auto p = TD::full({1, 1, 4, 4}, 0.5);
  // 1 - (2*4 + 1) / (8 + 8 + 1)
  EXPECT_NEAR(dice_loss(p, half_ones()).item(), 8.0 / 17.0, 1e-15);
  EXPECT_NEAR(dice_loss(half_ones(), half_ones()).item(), 0.0, 1e-15);
  EXPECT_NEAR(dice_loss(TD::zeros({1, 1, 4, 4}), TD::zeros({1, 1, 4, 4})).item(), 0.0, 1e-15);
}

TEST(Loss, MseAndCombined) {
  const auto p = TD::full({1, 1, 4, 4}, 0.5);
  EXPECT_NEAR(mse_loss(p, half_ones()).item(), 0.25, 1e-15);
  EXPECT_NEAR(combined_loss(p, half_ones()).item(), 0.25 + 8.0 / 17.0, 1e-15);
  EXPECT_THROW(dice_loss(p, TD::zeros({1, 1, 4, 5})), DimensionError);
  EXPECT_THROW(mse_loss(p, TD::zeros({16})), DimensionError);
}

TEST(Loss, Gradients) {
  Rng rng(5);
  auto p = TD::uniform({2, 1, 3, 3}, rng, 0.05, 0.95, true);
  const auto g = TD::from({2, 1, 3, 3}, {1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1, 0, 0});
  citnet::testing::check_grads([&] { return combined_loss(p, g); }, {{"p", p}}, 1e-6);
}

std::vector<std::uint8_t> bits(const char* s) {
  std::vector<std::uint8_t> v;
  for (; *s; ++s) {
    if (*s == '0' || *s == '1') v.push_back(*s == '1');
  }
  return v;
}

TEST(Metrics, CraftedConfusion) {
  const auto pred = bits("1100 1100 0010 0000");
  const auto gt = bits("1110 1000 0000 0000");
  const auto c = confusion(pred, gt);
  EXPECT_EQ(c.tp, 3);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.fn, 1);
  EXPECT_EQ(c.tn, 10);
  const auto m = compute_metrics(c);
  EXPECT_DOUBLE_EQ(m.di, 6.0 / 9.0);
  EXPECT_DOUBLE_EQ(m.ja, 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.se, 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(m.sp, 10.0 / 12.0);
  EXPECT_DOUBLE_EQ(m.ac, 13.0 / 16.0);
  EXPECT_DOUBLE_EQ(m.voe, 0.5);
  ASSERT_TRUE(m.rvd.has_value());
  EXPECT_DOUBLE_EQ(*m.rvd, 5.0 / 4.0 - 1.0);
  EXPECT_THROW(confusion(pred, bits("1")), DimensionError);
}

TEST(Metrics, Identities) {
  Rng rng(9);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::uint8_t> p(64), g(64);
    for (auto& x : p) x = coin(rng);
    for (auto& x : g) x = coin(rng);
    const auto m = compute_metrics(p, g);
    EXPECT_NEAR(m.di, 2 * m.ja / (1 + m.ja), 1e-12);
    EXPECT_NEAR(m.voe, 1 - m.ja, 1e-12);
    for (double v : {m.di, m.ja, m.se, m.ac, m.sp, m.voe}) {
      EXPECT_GE(v, 0);
      EXPECT_LE(v, 1);
    }
  }
}

TEST(Metrics, DegenerateMasks) {
  const std::vector<std::uint8_t> zeros(16, 0), ones(16, 1);
  const auto empty = compute_metrics(zeros, zeros);
  EXPECT_DOUBLE_EQ(empty.di, 1);
  EXPECT_DOUBLE_EQ(empty.ja, 1);
  EXPECT_FALSE(empty.rvd.has_value());
  const auto miss = compute_metrics(zeros, ones);
  EXPECT_DOUBLE_EQ(miss.di, 0);
  EXPECT_DOUBLE_EQ(miss.se, 0);
  EXPECT_DOUBLE_EQ(*miss.rvd, -1);

  const auto r = summarize({empty, miss});
  ASSERT_TRUE(r.mean.rvd.has_value());
  EXPECT_DOUBLE_EQ(*r.mean.rvd, -1);  // only the defined entry
  EXPECT_DOUBLE_EQ(r.mean.di, 0.5);
  const auto j = to_json(r);
  EXPECT_TRUE(j.at("samples").at(0).at("RVD").is_null());
  EXPECT_DOUBLE_EQ(j.at("mean").at("DI").get<double>(), 0.5);
}

TEST(Synthetic, DeterministicAndWithinAreaBand) {
  SyntheticOptions opt;
  opt.n = 6;
  opt.size = 32;
  opt.channels = 2;
  const auto a = gen_synthetic(3, opt), b = gen_synthetic(3, opt), c = gen_synthetic(4, opt);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.shape(), (Shape{2, 32, 32}));
    EXPECT_EQ(a[i].mask.shape(), (Shape{32, 32}));
    EXPECT_TRUE(std::ranges::equal(a[i].image.data(), b[i].image.data()));
    double area = 0;
    for (float m : a[i].mask.data()) {
      ASSERT_TRUE(m == 0.0f || m == 1.0f);
      area += m;
    }
    area /= 32 * 32;
    EXPECT_GE(area, opt.min_area);
    EXPECT_LE(area, opt.max_area);
    for (float v : a[i].image.data()) {
      EXPECT_GE(v, 0);
      EXPECT_LE(v, 1);
    }
  }
  EXPECT_FALSE(std::ranges::equal(a[0].image.data(), c[0].image.data()));
}

TEST(Synthetic, HardEdgesThresholdToTheMask) {
  SyntheticOptions opt;
  opt.size = 24;
  opt.blur = 0;
  const double cut = opt.background + opt.contrast / 2;
  for (const auto& s : gen_synthetic(11, opt)) {
    const auto img = s.image.data(), mask = s.mask.data();
    for (std::size_t i = 0; i < mask.size(); ++i) ASSERT_EQ(img[i] > cut, mask[i] == 1.0f) << i;
  }
}

TEST(Synthetic, RejectsBadOptions) {
  SyntheticOptions opt;
  opt.noise = 0.3;
  EXPECT_THROW(gen_synthetic(1, opt), ConfigError);
  opt = {};
  opt.min_area = 0.5;
  EXPECT_THROW(gen_synthetic(1, opt), ConfigError);
  opt = {};
  opt.size = 4;
  EXPECT_THROW(gen_synthetic(1, opt), ConfigError);
}

TEST(Synthetic, SaveLoadAndStack) {
  SyntheticOptions opt;
  opt.n = 3;
  opt.size = 16;
  const auto samples = gen_synthetic(2, opt);
  const auto dir = std::filesystem::temp_directory_path() / "citnet_train_samples";
  std::filesystem::remove_all(dir);
  save_samples(dir, samples);
  const auto back = load_samples(dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::ranges::equal(samples[i].image.data(), back[i].image.data()));
    EXPECT_TRUE(std::ranges::equal(samples[i].mask.data(), back[i].mask.data()));
  }
  const auto [images, masks] = stack(back);
  EXPECT_EQ(images.shape(), (Shape{3, 1, 16, 16}));
  EXPECT_EQ(masks.shape(), (Shape{3, 1, 16, 16}));
  EXPECT_EQ(masks.data()[2 * 256 + 17], back[2].mask.data()[17]);
  EXPECT_THROW(stack({}), UsageError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_samples(dir), io::FormatError);
}

TEST(Adam, FirstStepsMoveByLearningRate) {
  auto p = Tensor<float>::from({3}, {1, 2, 3}, true);
  const auto c = Tensor<float>::from({3}, {2, -0.5, 0});
  Adam adam({{"p", p}}, 0.1);
  for (int step = 1; step <= 2; ++step) {
    Tape<float> tape;
    adam.zero_grad();
    {
      TapeScope<float> scope(tape);
      tape.backward(sum(mul(p, c)));
    }
    adam.step();
    // Constant gradients: bias-corrected m / sqrt(v) is the sign of g.
    EXPECT_NEAR(p.data()[0], 1 - 0.1 * step, 1e-6);
    EXPECT_NEAR(p.data()[1], 2 + 0.1 * step, 1e-6);
    EXPECT_EQ(p.data()[2], 3);
  }
}

class ToyTraining : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticOptions opt;
    opt.n = 2;
    opt.size = cfg_.image_size;
    samples_ = gen_synthetic(5, opt);
  }
  ModelConfig cfg_ = ModelConfig::preset("gradcheck");
  std::vector<SegSample> samples_;
};

TEST_F(ToyTraining, ZeroLearningRateKeepsTheModel) {
  CiTNet<float> model(cfg_, 1);
  TrainOptions opt;
  opt.steps = 4;
  opt.lr = 0;
  const auto h = train_toy(model, samples_, opt);
  ASSERT_EQ(h.entries.size(), 4u);
  for (const auto& e : h.entries) EXPECT_EQ(e.loss, h.entries[0].loss);
}

TEST_F(ToyTraining, PlateauHalvesTheRate) {
  // A rate far below float resolution leaves the loss flat, so every step is stale.
  CiTNet<float> model(cfg_, 1);
  TrainOptions opt;
  opt.steps = 9;
  opt.lr = 1e-30;
  opt.plateau_patience = 3;
  const auto h = train_toy(model, samples_, opt);
  // Replay the rule on the recorded losses.
  double best = INFINITY, lr = opt.lr;
  std::int64_t stale = 0, halvings = 0;
  for (const auto& e : h.entries) {
    EXPECT_EQ(e.lr, lr) << "step " << e.step;
    if (e.loss < best) {
      best = e.loss;
      stale = 0;
    } else if (++stale >= opt.plateau_patience) {
      lr /= 2;
      stale = 0;
      ++halvings;
    }
  }
  EXPECT_GE(halvings, 1);
}

TEST_F(ToyTraining, SeededRunsAreReproducible) {
  TrainOptions opt;
  opt.steps = 3;
  CiTNet<float> a(cfg_, 4), b(cfg_, 4);
  EXPECT_EQ(train_toy(a, samples_, opt).hash(), train_toy(b, samples_, opt).hash());
  CiTNet<float> c(cfg_, 5);
  EXPECT_NE(train_toy(c, samples_, opt).hash(), train_toy(a, samples_, opt).hash());
}

TEST_F(ToyTraining, LossTrendsDownward) {
  CiTNet<float> model(cfg_, 1);
  TrainOptions opt;
  opt.steps = 30;
  opt.lr = 3e-3;
  const auto h = train_toy(model, samples_, opt);
  auto window_mean = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 5; ++i) s += h.entries[i].loss;
    return s / 5;
  };
  EXPECT_LT(window_mean(25), window_mean(0));
  const auto report = evaluate(model, samples_);
  EXPECT_EQ(report.samples.size(), 2u);
}

TEST_F(ToyTraining, AbortsOnNonFiniteLoss) {
  CiTNet<float> model(cfg_, 1);
  for (auto& [name, t] : model.params()) {
    if (name == "fuse.bias") t.mutable_data()[0] = NAN;
  }
  TrainOptions opt;
  opt.steps = 2;
  EXPECT_THROW(train_toy(model, samples_, opt), NumericError);
}

TEST_F(ToyTraining, RejectsMultiClassAndBadOptions) {
  auto cfg = cfg_;
  cfg.n_classes = 2;
  CiTNet<float> two(cfg, 1);
  EXPECT_THROW(train_toy(two, samples_, {}), UsageError);
  CiTNet<float> model(cfg_, 1);
  TrainOptions opt;
  opt.lr = -1;
  EXPECT_THROW(train_toy(model, samples_, opt), UsageError);
}

}  // namespace
}  // namespace citnet::train
