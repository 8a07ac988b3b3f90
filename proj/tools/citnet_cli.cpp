// citnet: model summary, verification, toy training, evaluation and synthetic
// data generation.
//
// Exit codes: 0 success, 1 validation or verification failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "citnet/analysis.hpp"
#include "citnet/io.hpp"
#include "citnet/kernels.hpp"
#include "citnet/train.hpp"
#include "citnet/verify.hpp"

namespace fs = std::filesystem;
using namespace citnet;

namespace {

struct ModelArgs {
  std::string config;
  std::string variant;
};

void add_model_flags(CLI::App* cmd, ModelArgs& m, const std::string& default_variant) {
  m.variant = default_variant;
  cmd->add_option("--config", m.config, "model configuration file (overrides flags)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--variant", m.variant, "preset: T, B, toy or gradcheck")
      ->capture_default_str();
}

ModelConfig resolve(const ModelArgs& m) {
  auto cfg = ModelConfig::preset(m.variant);
  if (!m.config.empty()) cfg = ModelConfig::from_json(read_json_file(m.config), cfg);
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write " + path);
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

void print_metrics(const Json& r) {
  const char* keys[] = {"DI", "JA", "SE", "AC", "SP", "VOE", "RVD"};
  std::printf("%-8s", "sample");
  for (const auto* k : keys) std::printf("%9s", k);
  std::printf("\n");
  auto row = [&](const std::string& label, const Json& m) {
    std::printf("%-8s", label.c_str());
    for (const auto* k : keys) {
      if (m.at(k).is_null()) std::printf("%9s", "n/a");
      else std::printf("%9.4f", m.at(k).get<double>());
    }
    std::printf("\n");
  };
  const auto& samples = r.at("samples");
  for (std::size_t i = 0; i < samples.size(); ++i) row(std::to_string(i), samples[i]);
  row("mean", r.at("mean"));
}

void apply_thread_cap() {
  if (const char* env = std::getenv("CIT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw UsageError("CIT_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    kernels::set_num_threads(static_cast<int>(n));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CiT-Net reference implementation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t seed = 0;
  std::string out;

  // summary
  auto* summary = app.add_subcommand("summary", "stage plan, parameters, FLOPs, complexity table");
  ModelArgs summary_model;
  std::string report_path;
  add_model_flags(summary, summary_model, "T");
  summary->add_option("--out", out, "write the machine-readable report here");
  summary->add_option("--report", report_path, "render a saved report (summary or eval) instead")
      ->check(CLI::ExistingFile);

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suite");
  ModelArgs verify_model;
  std::string level = "fast";
  add_model_flags(verify_cmd, verify_model, "gradcheck");
  verify_cmd->add_option("--level", level, "fast or full")
      ->check(CLI::IsMember({"fast", "full"}))
      ->capture_default_str();
  verify_cmd->add_option("--seed", seed, "seed for the random cases")->capture_default_str();
  verify_cmd->add_option("--out", out, "write the report here");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic blob dataset");
  train::SyntheticOptions data_opt;
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("--n", data_opt.n, "number of samples")->capture_default_str();
  gen->add_option("--size", data_opt.size, "image side in pixels")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  // train-toy
  auto* train_cmd = app.add_subcommand("train-toy", "overfit a small model on synthetic data");
  ModelArgs train_model;
  train::TrainOptions train_opt;
  std::string data_dir;
  add_model_flags(train_cmd, train_model, "toy");
  train_cmd->add_option("--data", data_dir, "dataset from gen-data (default: generate from --seed)")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--seed", seed)->capture_default_str();
  train_cmd->add_option("--steps", train_opt.steps)->capture_default_str();
  train_cmd->add_option("--lr", train_opt.lr)->capture_default_str();
  train_cmd->add_option("--n", data_opt.n, "samples to generate without --data")
      ->capture_default_str();
  train_cmd->add_option("--stop-dice", train_opt.stop_dice, "stop once train Dice exceeds this")
      ->capture_default_str();
  train_cmd->add_option("--out", out, "directory for weights, config and history");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a trained model on a dataset");
  std::string model_dir;
  eval_cmd->add_option("--model", model_dir, "output directory of train-toy")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", data_dir, "dataset from gen-data")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", out, "write the metrics report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    apply_thread_cap();

    if (summary->parsed()) {
      if (!report_path.empty()) {
        const auto r = read_json_file(report_path);
        if (r.contains("deviation_ledger")) std::cout << analysis::format_report(r);
        else if (r.contains("mean") && r.contains("samples")) print_metrics(r);
        else throw ConfigError("report: unrecognized report in " + report_path);
        return 0;
      }
      const auto cfg = resolve(summary_model);
      const auto report = analysis::complexity_report(cfg);
      std::cout << analysis::format_report(report);
      write_text(out, canonical_dump(report));
      return 0;
    }

    if (verify_cmd->parsed()) {
      const auto cfg = resolve(verify_model);
      const auto report = verify::run_suite(cfg, verify::parse_level(level), seed);
      for (const auto& c : report.checks) {
        std::printf("%-4s %-36s %7.2fs  %s\n", c.passed ? "ok" : "FAIL", c.name.c_str(),
                    c.seconds, c.detail.c_str());
      }
      std::printf("%s\n", report.passed() ? "all checks passed" : "verification FAILED");
      write_text(out, canonical_dump(report.to_json()));
      return report.passed() ? 0 : 1;
    }

    if (gen->parsed()) {
      const auto samples = train::gen_synthetic(seed, data_opt);
      train::save_samples(out, samples);
      std::printf("wrote %zu samples of %lldx%lld to %s\n", samples.size(),
                  static_cast<long long>(data_opt.size), static_cast<long long>(data_opt.size),
                  out.c_str());
      return 0;
    }

    if (train_cmd->parsed()) {
      const auto cfg = resolve(train_model);
      std::vector<train::SegSample> samples;
      if (data_dir.empty()) {
        data_opt.size = cfg.image_size;
        data_opt.channels = cfg.in_channels;
        samples = train::gen_synthetic(seed, data_opt);
      } else {
        samples = train::load_samples(data_dir);
      }
      CiTNet<float> model(cfg, seed);
      const auto history = train::train_toy(model, samples, train_opt);
      for (const auto& e : history.entries) {
        std::printf("step %4lld  loss %.6f  dice %.4f  lr %.3g\n",
                    static_cast<long long>(e.step), e.loss, e.dice, e.lr);
      }
      std::printf("history hash %s\n", history.hash().c_str());
      if (!out.empty()) {
        fs::create_directories(out);
        write_json_file((fs::path(out) / "config.json").string(), cfg.to_json());
        write_json_file((fs::path(out) / "history.json").string(), history.to_json());
        const auto params = model.params();
        io::save_dir(fs::path(out) / "weights", io::Named<float>(params.begin(), params.end()));
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      const auto cfg = ModelConfig::from_json(
          read_json_file((fs::path(model_dir) / "config.json").string()));
      cfg.validate();
      CiTNet<float> model(cfg, 0);
      const auto params = model.params();
      io::load_into(fs::path(model_dir) / "weights", io::Named<float>(params.begin(), params.end()));
      const auto report = train::to_json(train::evaluate(model, train::load_samples(data_dir)));
      print_metrics(report);
      write_text(out, canonical_dump(report));
      return 0;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
