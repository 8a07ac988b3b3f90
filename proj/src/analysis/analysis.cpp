#include "citnet/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "citnet/block.hpp"
#include "citnet/citnet.hpp"

namespace citnet::analysis {

// --- Rational ----------------------------------------------------------------

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("Rational: overflow");
  return r;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("Rational: overflow");
  return r;
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num < 0) throw std::invalid_argument("Rational: expects num >= 0, den > 0");
  const std::int64_t g = std::gcd(num, den);
  num_ = num / (g == 0 ? 1 : g);
  den_ = den / (g == 0 ? 1 : g);
}

std::string Rational::str() const {
  return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

Rational operator+(const Rational& a, const Rational& b) {
  const std::int64_t g = std::gcd(a.den_, b.den_);
  const std::int64_t den = checked_mul(a.den_ / g, b.den_);
  return Rational(checked_add(checked_mul(a.num_, b.den_ / g), checked_mul(b.num_, a.den_ / g)), den);
}

Rational operator*(const Rational& a, const Rational& b) {
  const Rational x(a.num_, b.den_), y(b.num_, a.den_);
  return Rational(checked_mul(x.num_, y.num_), checked_mul(x.den_, y.den_));
}

bool operator<(const Rational& a, const Rational& b) {
  return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
}

// --- closed forms ------------------------------------------------------------

namespace {

void require_positive(std::initializer_list<std::int64_t> v) {
  for (auto x : v) {
    if (x <= 0) throw ConfigError("complexity formulas take positive arguments");
  }
}

}  // namespace

Omega omega_msa(std::int64_t h, std::int64_t w, std::int64_t c) {
  require_positive({h, w, c});
  const Rational hw(checked_mul(h, w));
  return {Rational(4) * hw * Rational(c) * Rational(c), Rational(2) * hw * hw * Rational(c)};
}

Omega omega_wmsa(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t m) {
  require_positive({h, w, c, m});
  const Rational hw(checked_mul(h, w));
  return {Rational(4) * hw * Rational(c) * Rational(c),
          Rational(2) * Rational(m) * Rational(m) * hw * Rational(c)};
}

Omega omega_wacam(std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t m) {
  require_positive({h, w, c, m});
  const Rational hw(checked_mul(h, w));
  return {hw * Rational(c) * Rational(c) * Rational(1, 4),
          Rational(m) * Rational(m) * hw * Rational(c)};
}

// --- tallies -----------------------------------------------------------------

void Tally::add(const std::string& module, const std::string& stage, double value) {
  by_module[module] += value;
  by_stage[stage] += value;
  total += value;
}

namespace {

std::string stage_key(int s) { return "stage" + std::to_string(s); }

// Category and stage of a registry name.
std::pair<std::string, std::string> classify(const std::string& name) {
  auto field = [&](int index) {
    std::size_t start = 0;
    for (int i = 0; i < index; ++i) start = name.find('.', start) + 1;
    return name.substr(start, name.find('.', start) - start);
  };
  auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
  const std::string head = field(0), second = name.find('.') == std::string::npos ? "" : field(1);
  if (head == "embed") return {"patch_embed", "stem"};
  if (head == "fuse") return {"fusion_head", "head"};
  if (head == "trans") {
    if (second == "wacam") return {"transformer.wacam", stage_key(std::stoi(field(2)))};
    if (second == "block") {
      return {has(".lpm") ? "transformer.lpm" : "transformer.norm", stage_key(std::stoi(field(2)))};
    }
    if (second == "merge") return {"transformer.patch_merge", stage_key(std::stoi(field(2)) + 1)};
    if (second == "expand") return {"transformer.patch_expand", stage_key(std::stoi(field(2)) + 1)};
    if (second == "cross") return {"transformer.cross_feed", stage_key(std::stoi(field(2)))};
    if (second == "head") return {"transformer.head", "head"};
  }
  if (head == "cnn") {
    if (second == "stage") {
      const auto stage = stage_key(std::stoi(field(2)));
      if (has(".banks.")) return {"cnn.ddconv_banks", stage};
      if (has(".offset_head.")) return {"cnn.offset_heads", stage};
      if (has(".coeff_head.")) return {"cnn.coeff_heads", stage};
      return {"cnn.norm", stage};
    }
    if (second == "cross") return {"cnn.cross_feed", stage_key(std::stoi(field(2)))};
    if (second == "head") return {"cnn.head", "head"};
  }
  return {"other", "other"};
}

}  // namespace

Tally count_params(const ModelConfig& cfg) {
  const CiTNet<float> model(cfg, 0);
  Tally t;
  for (const auto& [name, tensor] : model.params()) {
    const auto [module, stage] = classify(name);
    t.add(module, stage, static_cast<double>(tensor.numel()));
  }
  return t;
}

// --- analytic FLOPs ------------------------------------------------------------

WacamMacs wacam_macs(std::int64_t h, std::int64_t w, std::int64_t c_full, std::int64_t window,
                     std::int64_t heads) {
  const std::int64_t m = std::min({window, h, w});
  const std::int64_t nw = (h / m) * (w / m), n = m * m, c = c_full / 8, d = c, hd = c / heads;
  WacamMacs r;
  r.projections = 2 * nw * n * c_full * c;
  r.spatial = nw * (n * c * 3 * c + 2 * heads * n * n * hd);
  r.channel = nw * (c * n * 3 * n + 2 * c * c * n);
  r.cross = 2 * nw * (c * n * d + 2 * m * m * c * d + 2 * c * m * d + c * d * n);
  return r;
}

namespace {

struct FlopModel {
  const ModelConfig& cfg;
  std::int64_t batch;
  Tally t;

  void add(const std::string& module, int stage, double flops) {
    t.add(module, stage < 0 ? (stage == -1 ? "stem" : "head") : stage_key(stage), flops);
  }

  void wacam(int s, std::int64_t r, std::int64_t ch, std::int64_t heads) {
    const std::int64_t m = std::min(cfg.window, r), nw = (r / m) * (r / m), n = m * m;
    const std::int64_t bw = batch * nw, c = ch / 8, d = c, hd = c / heads;
    const auto& on = cfg.branches;
    double f = 2.0 * bw * n * ch * c;  // compact
    if (on[0]) f += 2.0 * bw * n * c * 3 * c + 4.0 * bw * heads * n * n * hd + 5.0 * bw * heads * n * n;
    if (on[1]) f += 2.0 * bw * c * n * 3 * n + 4.0 * bw * c * c * n + 5.0 * bw * c * c;
    for (int i = 2; i < 4; ++i) {
      if (!on[i]) continue;
      f += 2.0 * bw * c * n * d + 2 * 2.0 * bw * m * (m * c) * d + 4.0 * bw * c * m * d +
           5.0 * bw * c * m + 2.0 * bw * c * d * n;
    }
    f += 2.0 * 4 * bw * n * c;   // lambda fusion
    f += 2.0 * bw * n * c * ch;  // output projection
    add("transformer.wacam", s, f);
  }

  void block_pair(int s, std::int64_t r, std::int64_t ch, std::int64_t heads) {
    const double tokens = static_cast<double>(batch) * r * r;
    add("transformer.norm", s, 4 * 5.0 * tokens * ch);
    for (int i = 0; i < 2; ++i) {
      wacam(s, r, ch, heads);
      const std::int64_t hidden = cfg.mlp_ratio * ch;
      if (cfg.lightweight_mlp) {
        add("transformer.lpm", s,
            2.0 * tokens * ch * (hidden / 2) + 2.0 * tokens * (hidden / 2) * 9 +
                2.0 * tokens * hidden * ch);
      } else {
        add("transformer.lpm", s, 4.0 * tokens * ch * hidden);
      }
    }
  }

  // One DDConv + GroupNorm unit; returns the output resolution.
  std::int64_t conv_unit(int s, std::int64_t in, std::int64_t out, std::int64_t r_in,
                         std::int64_t stride) {
    const std::int64_t r = conv_output_size(r_in, 3, stride, 1), k = 9, n = cfg.ddconv_banks;
    const double px = static_cast<double>(batch) * r * r;
    if (!cfg.deformable && n == 1) {
      add("cnn.ddconv_banks", s, 2.0 * px * out * in * k);
    } else {
      if (cfg.deformable) add("cnn.offset_heads", s, 2.0 * px * 2 * k * in * k);
      add("cnn.sampling", s, 8.0 * px * in * k);
      std::int64_t alpha_rows = batch;
      if (n > 1 && cfg.static_alpha) {
        add("cnn.coeff_heads", s, 5.0 * n);
        alpha_rows = 1;
      } else if (n > 1) {
        add("cnn.coeff_heads", s, 2.0 * batch * in * n + 5.0 * batch * n);
      }
      add("cnn.ddconv_banks", s, 2.0 * alpha_rows * n * out * in * k + 2.0 * px * out * in * k);
    }
    add("cnn.norm", s, 5.0 * px * out);
    return r;
  }

  void run() {
    const auto plan = cfg.plan();
    const std::int64_t d = cfg.embed_dim, p = cfg.patch_size, g = cfg.grid();
    const double b = static_cast<double>(batch);
    add("patch_embed", -1, 2.0 * b * d * cfg.in_channels * p * p * g * g + 5.0 * b * g * g * d);

    std::int64_t r_cnn = g;
    for (int i = 0; i < 7; ++i) {
      const auto& s = plan[i];
      const std::int64_t ch = s.channels, r = s.resolution;
      if (i >= 1 && i <= 3) {
        const std::int64_t prev = plan[i - 1].channels;
        add("transformer.patch_merge", i, 2.0 * b * r * r * 4 * prev * 2 * prev + 5.0 * b * r * r * ch);
      }
      if (i >= 4) {
        const std::int64_t prev = plan[i - 1].channels, rp = plan[i - 1].resolution;
        add("transformer.patch_expand", i, 2.0 * b * rp * rp * prev * 2 * prev + 5.0 * b * r * r * ch);
        add("transformer.cross_feed", i, 2.0 * b * r * r * 3 * ch * ch);
        add("cnn.cross_feed", i, 2.0 * b * r * r * 3 * ch * ch);
      }
      for (std::int64_t k = 0; k < s.layers / 2; ++k) block_pair(i, r, ch, s.heads);

      const std::int64_t in = i == 0 ? d : plan[i - 1].channels;
      const std::int64_t stride = (i >= 1 && i <= 3) ? 2 : 1;
      if (i >= 4) r_cnn *= 2;
      r_cnn = conv_unit(i, in, ch, r_cnn, stride);
      r_cnn = conv_unit(i, ch, ch, r_cnn, 1);
    }
    const double full = b * (g * p) * (g * p);
    add("transformer.head", -2, 2.0 * b * g * g * d * p * p * d + 5.0 * full * d);
    add("cnn.head", -2, 2.0 * b * g * g * d * d);
    add("fusion_head", -2, 2.0 * full * 2 * d * cfg.n_classes);
  }
};

}  // namespace

Tally count_flops(const ModelConfig& cfg, std::int64_t batch) {
  cfg.validate();
  FlopModel m{cfg, batch, {}};
  m.run();
  return m.t;
}

bool paper_target(const std::string& variant, PaperTarget& out) {
  if (variant == "T") {
    out = {11.58, 4.53};
    return true;
  }
  if (variant == "B") {
    out = {21.24, 13.29};
    return true;
  }
  return false;
}

// --- report --------------------------------------------------------------------

namespace {

const char* basis(const std::string& module) {
  static const std::map<std::string, const char*> notes = {
      {"patch_embed", "PxP stride-P conv + LayerNorm shared by both branches"},
      {"transformer.wacam", "compact C->C/8 projection, four branches, lambda fusion, C/8->C output"},
      {"transformer.lpm", "Ghost split of an r=4 perceptron: C->2C linear, depthwise 3x3, 4C->C linear"},
      {"transformer.norm", "four LayerNorms per block pair"},
      {"transformer.patch_merge", "4C->2C bias-free linear + LayerNorm"},
      {"transformer.patch_expand", "C->2C bias-free linear + LayerNorm"},
      {"transformer.cross_feed", "3C->C pointwise fusion per decoder stage (operator not given)"},
      {"transformer.head", "final xP expansion D->P^2 D + LayerNorm"},
      {"cnn.ddconv_banks", "n candidate 3x3 kernels per DDConv, two units per stage at the stage width"},
      {"cnn.offset_heads", "3x3 conv to 2k^2 offset channels per DDConv"},
      {"cnn.coeff_heads", "GAP -> linear(C->n) -> softmax per DDConv"},
      {"cnn.sampling", "bilinear sampling of k^2 taps per output pixel"},
      {"cnn.norm", "GroupNorm after every DDConv"},
      {"cnn.cross_feed", "3C->C 1x1 conv per decoder stage (operator not given)"},
      {"cnn.head", "1x1 conv D->D, nearest upsampling xP"},
      {"fusion_head", "concat of both heads -> 1x1 conv to classes"},
  };
  const auto it = notes.find(module);
  return it == notes.end() ? "" : it->second;
}

Json tally_json(const Tally& t) {
  Json j;
  j["total"] = t.total;
  j["by_module"] = t.by_module;
  j["by_stage"] = t.by_stage;
  return j;
}

}  // namespace

Json complexity_report(const ModelConfig& cfg) {
  const auto params = count_params(cfg);
  const auto flops = count_flops(cfg, 1);
  Json r;
  r["config"] = cfg.to_json();
  r["input"] = {1, cfg.in_channels, cfg.image_size, cfg.image_size};

  Json plan = Json::array();
  for (const auto& s : cfg.plan()) {
    plan.push_back({{"stage", s.index}, {"resolution", s.resolution}, {"channels", s.channels},
                    {"layers", s.layers}, {"heads", s.heads}, {"window", s.window},
                    {"shift", s.shift}});
  }
  r["stage_plan"] = plan;
  r["params"] = tally_json(params);
  r["flops"] = tally_json(flops);

  Json omega = Json::array();
  for (const auto& s : cfg.plan()) {
    const auto msa = omega_msa(s.resolution, s.resolution, s.channels);
    const auto wmsa = omega_wmsa(s.resolution, s.resolution, s.channels, s.window);
    const auto wacam = omega_wacam(s.resolution, s.resolution, s.channels, s.window);
    const auto macs = wacam_macs(s.resolution, s.resolution, s.channels, s.window, s.heads);
    omega.push_back({{"stage", s.index},
                     {"h", s.resolution},
                     {"w", s.resolution},
                     {"C", s.channels},
                     {"M", s.window},
                     {"msa", msa.total().str()},
                     {"wmsa", wmsa.total().str()},
                     {"wacam", wacam.total().str()},
                     {"wacam_quadratic", wacam.quadratic.str()},
                     {"wacam_linear", wacam.linear.str()},
                     {"measured_projection_macs", macs.projections},
                     {"measured_attention_macs", macs.total() - macs.projections},
                     {"measured_total_macs", macs.total()}});
  }
  r["omega"] = omega;

  Json ledger = Json::array();
  for (const auto& [module, n] : flops.by_module) {
    const double p = params.by_module.count(module) ? params.by_module.at(module) : 0.0;
    ledger.push_back({{"component", module},
                      {"params", p},
                      {"params_share", p / params.total},
                      {"gflops", n / 1e9},
                      {"flops_share", n / flops.total},
                      {"construction", basis(module)}});
  }
  for (const auto& [module, p] : params.by_module) {
    if (flops.by_module.count(module)) continue;
    ledger.push_back({{"component", module}, {"params", p}, {"params_share", p / params.total},
                      {"gflops", 0.0}, {"flops_share", 0.0}, {"construction", basis(module)}});
  }
  r["deviation_ledger"] = ledger;

  PaperTarget target;
  if (paper_target(cfg.variant, target)) {
    const double pm = params.total / 1e6, gf = flops.total / 1e9;
    const double pr = pm / target.params_m, fr = gf / target.gflops;
    r["paper"] = {{"params_m", target.params_m},
                  {"gflops", target.gflops},
                  {"measured_params_m", pm},
                  {"measured_gflops", gf},
                  {"params_ratio", pr},
                  {"gflops_ratio", fr},
                  {"params_deviation_pct", 100 * (pr - 1)},
                  {"gflops_deviation_pct", 100 * (fr - 1)},
                  {"within_factor_2", pr <= 2 && pr >= 0.5 && fr <= 2 && fr >= 0.5}};
  }
  return r;
}

std::string format_report(const Json& r) {
  std::ostringstream os;
  char line[256];
  const auto& cfg = r.at("config");
  os << "CiT-Net-" << cfg.at("variant").get<std::string>() << "  input "
     << r.at("input").dump() << "\n\n";
  os << "stage  grid  channels  layers  heads  window  shift\n";
  for (const auto& s : r.at("stage_plan")) {
    std::snprintf(line, sizeof line, "%5d  %4lld  %8lld  %6lld  %5lld  %6lld  %5lld\n",
                  s.at("stage").get<int>(), s.at("resolution").get<long long>(),
                  s.at("channels").get<long long>(), s.at("layers").get<long long>(),
                  s.at("heads").get<long long>(), s.at("window").get<long long>(),
                  s.at("shift").get<long long>());
    os << line;
  }
  os << "\ncomponent                       params        GFLOPs\n";
  for (const auto& e : r.at("deviation_ledger")) {
    std::snprintf(line, sizeof line, "%-28s %12.0f  %12.4f\n",
                  e.at("component").get<std::string>().c_str(), e.at("params").get<double>(),
                  e.at("gflops").get<double>());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-28s %12.0f  %12.4f\n", "total",
                r.at("params").at("total").get<double>(),
                r.at("flops").at("total").get<double>() / 1e9);
  os << line;

  os << "\nattention cost per layer (closed forms vs this construction, MACs)\n";
  os << "stage      MSA            W-MSA          W-ACAM         measured (proj + attn)\n";
  for (const auto& o : r.at("omega")) {
    std::snprintf(line, sizeof line, "%5d  %-14s %-14s %-14s %lld (%lld + %lld)\n",
                  o.at("stage").get<int>(), o.at("msa").get<std::string>().c_str(),
                  o.at("wmsa").get<std::string>().c_str(), o.at("wacam").get<std::string>().c_str(),
                  o.at("measured_total_macs").get<long long>(),
                  o.at("measured_projection_macs").get<long long>(),
                  o.at("measured_attention_macs").get<long long>());
    os << line;
  }
  if (r.contains("paper")) {
    const auto& p = r.at("paper");
    std::snprintf(line, sizeof line,
                  "\npaper: %.2f M params / %.2f GFLOPs; this build: %.2f M (%+.1f%%) / %.2f "
                  "GFLOPs (%+.1f%%); within factor 2: %s\n",
                  p.at("params_m").get<double>(), p.at("gflops").get<double>(),
                  p.at("measured_params_m").get<double>(),
                  p.at("params_deviation_pct").get<double>(),
                  p.at("measured_gflops").get<double>(), p.at("gflops_deviation_pct").get<double>(),
                  p.at("within_factor_2").get<bool>() ? "yes" : "no");
    os << line;
  }
  return os.str();
}

}  // namespace citnet::analysis
