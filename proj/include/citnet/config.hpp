#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace citnet {

using Json = nlohmann::json;

struct StageInfo {
  int index = 0;
  std::int64_t resolution = 0;  // token grid side
  std::int64_t channels = 0;
  std::int64_t layers = 0;
  std::int64_t heads = 0;
  std::int64_t window = 0;      // effective window at this resolution
  std::int64_t shift = 0;       // shift used by the second block of each pair
};

struct ModelConfig {
  std::string variant = "T";
  std::int64_t image_size = 224;
  std::int64_t patch_size = 4;
  std::int64_t window = 7;
  std::int64_t embed_dim = 96;
  std::array<std::int64_t, 7> layers = {2, 2, 6, 2, 6, 2, 2};
  std::array<std::int64_t, 7> heads = {3, 6, 12, 24, 12, 6, 3};
  std::int64_t in_channels = 3;
  std::int64_t n_classes = 1;
  int ddconv_banks = 4;
  std::int64_t mlp_ratio = 4;
  int norm_groups = 8;
  bool lightweight_mlp = true;
  bool deformable = true;
  bool static_alpha = false;
  bool cross_feed = true;
  std::array<bool, 4> branches = {true, true, true, true};

  static ModelConfig tiny();   // variant T
  static ModelConfig base();   // variant B
  static ModelConfig preset(const std::string& name);

  /// Throws ConfigError naming the offending field.
  void validate() const;
  std::int64_t grid() const { return image_size / patch_size; }
  std::vector<StageInfo> plan() const;

  Json to_json() const;
  /// Starts from `defaults` and applies every key of `j`; unknown keys are errors.
  static ModelConfig from_json(const Json& j, const ModelConfig& defaults);
  static ModelConfig from_json(const Json& j);
};

/// Small configurations used by tests, verification and the toy trainer.
namespace presets {
/// 32x32 input, patch 2, window 2, D = 8; every stage has one block pair and one head.
ModelConfig gradcheck();
/// 56x56 input, patch 1, window 7, D = 32.
ModelConfig toy();
}  // namespace presets

/// Canonical text form: sorted keys, two-space indent, trailing newline.
std::string canonical_dump(const Json& j);
Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace citnet
