#include "citnet/config.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "citnet/tensor.hpp"

namespace citnet {

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.variant = "B";
  c.layers = {2, 2, 18, 2, 18, 2, 2};
  c.heads = {4, 8, 16, 32, 16, 8, 4};
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "T") return tiny();
  if (name == "B") return base();
  if (name == "gradcheck") return presets::gradcheck();
  if (name == "toy") return presets::toy();
  throw ConfigError("variant: unknown preset '" + name + "' (expected T, B, toy or gradcheck)");
}

namespace presets {

ModelConfig gradcheck() {
  ModelConfig c;
  c.variant = "gradcheck";
  c.image_size = 32;
  c.patch_size = 2;
  c.window = 2;
  c.embed_dim = 8;
  c.layers = {2, 2, 2, 2, 2, 2, 2};
  c.heads = {1, 1, 1, 1, 1, 1, 1};
  c.in_channels = 1;
  return c;
}

ModelConfig toy() {
  ModelConfig c;
  c.variant = "toy";
  c.image_size = 56;
  c.patch_size = 1;
  c.window = 7;
  c.embed_dim = 32;
  c.layers = {2, 2, 2, 2, 2, 2, 2};
  c.heads = {1, 2, 4, 8, 4, 2, 1};
  c.in_channels = 1;
  return c;
}

}  // namespace presets

namespace {

std::int64_t stage_scale(int i) { return std::int64_t{1} << std::min(i, 6 - i); }

[[noreturn]] void fail(const std::string& field, const std::string& why) {
  throw ConfigError(field + ": " + why);
}

}  // namespace

void ModelConfig::validate() const {
  if (image_size <= 0) fail("image_size", "must be positive");
  if (patch_size <= 0) fail("patch_size", "must be positive");
  if (image_size % patch_size != 0) {
    fail("patch_size", std::to_string(patch_size) + " does not divide image_size " +
                           std::to_string(image_size));
  }
  if (grid() % 8 != 0) {
    fail("image_size", "token grid " + std::to_string(grid()) +
                           " cannot be halved three times (needs a multiple of 8)");
  }
  if (window <= 0) fail("window", "must be positive");
  if (embed_dim <= 0 || embed_dim % 8 != 0) fail("embed_dim", "must be a positive multiple of 8");
  if (in_channels <= 0) fail("in_channels", "must be positive");
  if (n_classes <= 0) fail("n_classes", "must be positive");
  if (ddconv_banks <= 0) fail("ddconv_banks", "must be positive");
  if (mlp_ratio <= 0) fail("mlp_ratio", "must be positive");
  if (norm_groups <= 0) fail("norm_groups", "must be positive");
  for (int i = 0; i < 7; ++i) {
    const std::string idx = "[" + std::to_string(i) + "]";
    const std::int64_t res = grid() / stage_scale(i), ch = embed_dim * stage_scale(i);
    if (layers[i] <= 0 || layers[i] % 2 != 0) {
      fail("layers" + idx, "blocks come in W/SW pairs; got " + std::to_string(layers[i]));
    }
    if (heads[i] <= 0 || (ch / 8) % heads[i] != 0) {
      fail("heads" + idx, std::to_string(heads[i]) + " heads do not divide reduced dim " +
                              std::to_string(ch / 8));
    }
    if (res % window != 0) {
      fail("window", std::to_string(window) + " does not divide the " + std::to_string(res) +
                         "x" + std::to_string(res) + " grid of stage " + std::to_string(i));
    }
    if ((mlp_ratio * ch) % 2 != 0) fail("mlp_ratio", "hidden width must be even");
  }
}

std::vector<StageInfo> ModelConfig::plan() const {
  std::vector<StageInfo> out;
  for (int i = 0; i < 7; ++i) {
    StageInfo s;
    s.index = i;
    s.resolution = grid() / stage_scale(i);
    s.channels = embed_dim * stage_scale(i);
    s.layers = layers[i];
    s.heads = heads[i];
    s.window = std::min(window, s.resolution);
    s.shift = s.resolution <= window ? 0 : window / 2;
    out.push_back(s);
  }
  return out;
}

Json ModelConfig::to_json() const {
  Json j;
  j["variant"] = variant;
  j["image_size"] = image_size;
  j["patch_size"] = patch_size;
  j["window"] = window;
  j["embed_dim"] = embed_dim;
  j["layers"] = layers;
  j["heads"] = heads;
  j["in_channels"] = in_channels;
  j["n_classes"] = n_classes;
  j["ddconv_banks"] = ddconv_banks;
  j["mlp_ratio"] = mlp_ratio;
  j["norm_groups"] = norm_groups;
  j["lightweight_mlp"] = lightweight_mlp;
  j["deformable"] = deformable;
  j["static_alpha"] = static_alpha;
  j["cross_feed"] = cross_feed;
  j["branches"] = branches;
  return j;
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig base_cfg;
  if (j.is_object() && j.contains("variant") && j["variant"].is_string()) {
    const auto v = j["variant"].get<std::string>();
    if (v == "T" || v == "B" || v == "toy" || v == "gradcheck") base_cfg = preset(v);
  }
  return from_json(j, base_cfg);
}

ModelConfig ModelConfig::from_json(const Json& j, const ModelConfig& defaults) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  ModelConfig c = defaults;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "variant") c.variant = value.get<std::string>();
      else if (key == "image_size") c.image_size = value.get<std::int64_t>();
      else if (key == "patch_size") c.patch_size = value.get<std::int64_t>();
      else if (key == "window") c.window = value.get<std::int64_t>();
      else if (key == "embed_dim") c.embed_dim = value.get<std::int64_t>();
      else if (key == "layers") c.layers = value.get<std::array<std::int64_t, 7>>();
      else if (key == "heads") c.heads = value.get<std::array<std::int64_t, 7>>();
      else if (key == "in_channels") c.in_channels = value.get<std::int64_t>();
      else if (key == "n_classes") c.n_classes = value.get<std::int64_t>();
      else if (key == "ddconv_banks") c.ddconv_banks = value.get<int>();
      else if (key == "mlp_ratio") c.mlp_ratio = value.get<std::int64_t>();
      else if (key == "norm_groups") c.norm_groups = value.get<int>();
      else if (key == "lightweight_mlp") c.lightweight_mlp = value.get<bool>();
      else if (key == "deformable") c.deformable = value.get<bool>();
      else if (key == "static_alpha") c.static_alpha = value.get<bool>();
      else if (key == "cross_feed") c.cross_feed = value.get<bool>();
      else if (key == "branches") c.branches = value.get<std::array<bool, 4>>();
      else throw ConfigError(key + ": unknown field");
    } catch (const Json::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  return c;
}

std::string canonical_dump(const Json& j) { return j.dump(2) + "\n"; }

Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << canonical_dump(j);
}

}  // namespace citnet
