#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
  const auto log = fs::temp_directory_path() / "citnet_cli_out.txt";
  const std::string cmd = env + " " + std::string(CITNET_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "citnet_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST_F(Cli, SummaryOfPublishedVariants) {
  const auto t = run("summary --variant T --out " + path("t.json"));
  EXPECT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("11.58"), std::string::npos);
  EXPECT_NE(t.out.find("4.53"), std::string::npos);
  const auto b = run("summary --variant B");
  EXPECT_EQ(b.code, 0) << b.out;
  EXPECT_NE(b.out.find("21.24"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("t.json")));
  const auto again = run("summary --report " + path("t.json"));
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("11.58"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("summary --bogus").code, 2);
  EXPECT_EQ(run("verify --level medium").code, 2);
  EXPECT_EQ(run("gen-data").code, 2);  // --out is required
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("summary --variant gradcheck", "CIT_THREADS=zero").code, 2);
}

TEST_F(Cli, InvalidConfigurationExitsOne) {
  std::ofstream(path("bad.json")) << R"({"window": 5})";
  const auto r = run("summary --config " + path("bad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("invalid configuration: window"), std::string::npos) << r.out;
  std::ofstream(path("typo.json")) << R"({"windw": 7})";
  EXPECT_EQ(run("summary --config " + path("typo.json")).code, 1);
}

TEST_F(Cli, FastVerificationPasses) {
  const auto r = run("verify --level fast --out " + path("v.json"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all checks passed"), std::string::npos);
}

TEST_F(Cli, DataTrainEvalPipelineIsDeterministic) {
  ASSERT_EQ(run("gen-data --seed 3 --n 2 --size 32 --out " + path("d1")).code, 0);
  ASSERT_EQ(run("gen-data --seed 3 --n 2 --size 32 --out " + path("d2")).code, 0);
  for (const auto& e : fs::directory_iterator(path("d1"))) {
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "d2" / e.path().filename())) << e.path();
  }
  const std::string train = "train-toy --variant gradcheck --steps 3 --data " + path("d1");
  const auto a = run(train + " --out " + path("m"));
  ASSERT_EQ(a.code, 0) << a.out;
  const auto b = run(train);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("history hash"), std::string::npos);
  for (const char* f : {"config.json", "history.json", "weights"}) {
    EXPECT_TRUE(fs::exists(dir_ / "m" / f)) << f;
  }
  const auto e = run("eval --model " + path("m") + " --data " + path("d1") + " --out " +
                     path("metrics.json"));
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("mean"), std::string::npos);
  EXPECT_EQ(run("summary --report " + path("metrics.json")).code, 0);
}

}  // namespace
