#include <filesystem>
#include <fstream>

#include "citnet/io.hpp"
#include "helpers.hpp"

namespace citnet {
namespace {

using testing::TD;
using testing::TF;

TEST(Shape, NumelAndFormatting) {
  EXPECT_EQ(numel({2, 3, 4}), 24);
  EXPECT_EQ(numel({}), 1);
  EXPECT_EQ(to_string({2, 3}), "[2, 3]");
}

TEST(Tensor, FactoriesAndSharedHandles) {
  const auto z = TD::zeros({2, 2});
  EXPECT_EQ(z.numel(), 4);
  const auto alias = z;
  alias.mutable_data()[0] = 5;
  EXPECT_EQ(z.at(0), 5);
  const auto copy = z.clone();
  copy.mutable_data()[0] = 1;
  EXPECT_EQ(z.at(0), 5);
  EXPECT_THROW(TD::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_EQ(TD::scalar(3.5).item(), 3.5);
  EXPECT_THROW(TD::zeros({2}).item(), UsageError);
}

TEST(Tensor, RandomFactoriesAreSeeded) {
  Rng a(9), b(9);
  const auto x = TF::randn({64}, a), y = TF::randn({64}, b);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  Rng c(3);
  const auto u = TF::uniform({256}, c, -0.5f, 0.25f);
  for (float v : u.data()) {
    EXPECT_GE(v, -0.5f);
    EXPECT_LT(v, 0.25f);
  }
}

TEST(Tape, ChainRuleAndAccumulationOverReuse) {
  const auto x = TD::from({3}, {1, 2, 3}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    // y = sum(x * x + 3 x); dy/dx = 2x + 3
    const auto y = sum(add(mul(x, x), scale(x, 3.0)));
    tape.backward(y);
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{5, 7, 9}));
}

TEST(Tape, LeafGradientsAccumulateAcrossPasses) {
  const auto x = TD::from({2}, {1, -1}, true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(scale(x, 2.0)));
  }
  EXPECT_EQ(x.grad()[0], 4);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad() && x.grad()[0] != 0);
}

TEST(Tape, NothingIsRecordedWithoutScopeOrUnderNoGrad) {
  const auto x = TD::from({2}, {1, 2}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    NoGradScope<double> off;
    sum(mul(x, x));
  }
  EXPECT_EQ(tape.size(), 0u);
  sum(mul(x, x));
  EXPECT_EQ(tape.size(), 0u);
  {
    TapeScope<double> scope(tape);
    sum(mul(TD::from({2}, {1, 2}), TD::from({2}, {3, 4})));  // no input needs grad
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, BackwardRejectsBadLosses) {
  const auto x = TD::from({2}, {1, 2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  EXPECT_THROW(tape.backward(mul(x, x)), UsageError);
  EXPECT_THROW(tape.backward(TD::scalar(1.0)), UsageError);
}

TEST(Tape, ReplayIsBitReproducible) {
  Rng rng(5);
  const auto a = testing::rand_d({8, 8}, rng), b = testing::rand_d({8, 8}, rng);
  a.set_requires_grad(true);
  std::vector<double> first;
  for (int pass = 0; pass < 2; ++pass) {
    a.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(softmax(matmul(a, b), -1)));
    if (pass == 0) first.assign(a.grad().begin(), a.grad().end());
  }
  EXPECT_TRUE(std::equal(first.begin(), first.end(), a.grad().begin()));
}

TEST(FiniteChecks, NonFiniteResultsThrowNumericError) {
  const auto x = TD::from({2}, {1, 0});
  EXPECT_THROW(div(x, TD::from({2}, {0, 0})), NumericError);
  set_finite_checks(false);
  EXPECT_NO_THROW(div(x, TD::from({2}, {0, 0})));
  set_finite_checks(true);
  EXPECT_TRUE(finite_checks());
}

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("citnet_io_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(IoTest, TensorRoundTripIsExactAndConvertsDtype) {
  Rng rng(2);
  const auto x = TF::randn({3, 1, 4}, rng);
  io::write_tensor(dir_ / "x.citn", x);
  const auto y = io::read_tensor<float>(dir_ / "x.citn");
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  const auto d = io::read_tensor<double>(dir_ / "x.citn");
  EXPECT_EQ(d.at(5), static_cast<double>(x.at(5)));
}

TEST_F(IoTest, HeaderLayoutIsLittleEndian) {
  io::write_tensor(dir_ / "s.citn", TD::from({2}, {1.0, -2.0}));
  std::ifstream f(dir_ / "s.citn", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), {});
  ASSERT_EQ(bytes.size(), 4u + 3 + 4 + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CITN");
  EXPECT_EQ(bytes[4], 1);  // version
  EXPECT_EQ(bytes[5], 1);  // f64
  EXPECT_EQ(bytes[6], 1);  // ndim
  EXPECT_EQ(bytes[7], 2);
  EXPECT_EQ(bytes[8] | bytes[9] | bytes[10], 0);
  EXPECT_EQ(bytes[17], 0xf0);  // 1.0 = 0x3ff0000000000000
  EXPECT_EQ(bytes[18], 0x3f);
}

TEST_F(IoTest, CorruptFilesAreRejected) {
  io::write_tensor(dir_ / "a.citn", TF::zeros({4}));
  {
    std::ofstream f(dir_ / "a.citn", std::ios::binary | std::ios::app);
    f.put('x');
  }
  EXPECT_THROW(io::read_tensor<float>(dir_ / "a.citn"), io::FormatError);
  {
    std::ofstream f(dir_ / "b.citn", std::ios::binary);
    f << "NOPE";
  }
  EXPECT_THROW(io::read_tensor<float>(dir_ / "b.citn"), io::FormatError);
  EXPECT_THROW(io::read_tensor<float>(dir_ / "missing.citn"), io::FormatError);
}

TEST_F(IoTest, DirectoriesRoundTripAndLoadIntoChecksShapes) {
  const io::Named<float> saved = {{"w", TF::from({2}, {1, 2})}, {"b.c", TF::from({1}, {3})}};
  io::save_dir(dir_ / "ck", saved);
  const auto loaded = io::load_dir<float>(dir_ / "ck");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[1].first, "b.c");
  EXPECT_EQ(loaded[1].second.at(0), 3);

  const io::Named<float> into = {{"w", TF::zeros({2})}, {"b.c", TF::zeros({1})}};
  io::load_into(dir_ / "ck", into);
  EXPECT_EQ(into[0].second.at(1), 2);
  EXPECT_THROW(io::load_into(dir_ / "ck", io::Named<float>{{"w", TF::zeros({3})}}), io::FormatError);
  EXPECT_THROW(io::load_into(dir_ / "ck", io::Named<float>{{"v", TF::zeros({2})}}), io::FormatError);
}

}  // namespace
}  // namespace citnet
