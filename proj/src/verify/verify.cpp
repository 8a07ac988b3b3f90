#include "citnet/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "citnet/analysis.hpp"
#include "citnet/block.hpp"
#include "citnet/ddconv.hpp"
#include "citnet/grad_check.hpp"
#include "citnet/ops.hpp"
#include "citnet/train.hpp"
#include "citnet/wacam.hpp"

namespace citnet::verify {

using TD = Tensor<double>;
using analysis::Rational;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

bool bit_equal(const TD& a, const TD& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TD rand_d(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return TD::uniform(s, rng, lo, hi);
}

// A small shifted W-ACAM on an 8 x 8 grid: C = 32 (c = 4), M = 4, two heads.
Wacam<double> small_wacam(Rng& rng, bool shifted = true) {
  WacamOptions opt;
  opt.dim = 32;
  opt.window = 4;
  opt.heads = 2;
  opt.shifted = shifted;
  return Wacam<double>(opt, 8, 8, rng);
}

BlockPair<double> small_block(Rng& rng, std::int64_t dim = 16) {
  BlockOptions opt;
  opt.attention.dim = dim;
  opt.attention.window = 2;
  opt.attention.heads = 1;
  return BlockPair<double>(opt, 4, 4, rng);
}

void zero(const nn::Linear<double>& l) {
  std::fill(l.weight.mutable_data().begin(), l.weight.mutable_data().end(), 0.0);
  if (l.bias.defined()) std::fill(l.bias.mutable_data().begin(), l.bias.mutable_data().end(), 0.0);
}

}  // namespace

// --- reporting -----------------------------------------------------------------------

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

Json Report::to_json() const {
  Json list = Json::array();
  for (const auto& c : checks) {
    list.push_back(
        {{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}, {"seconds", c.seconds}});
  }
  return {{"passed", passed()}, {"checks", list}};
}

Check run_check(const std::string& name, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c{name, false, "", 0};
  try {
    const auto o = fn();
    c.passed = o.passed;
    c.detail = o.detail;
  } catch (const std::exception& e) {
    c.detail = std::string("exception: ") + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

// --- model structure -------------------------------------------------------------------

template <typename T>
std::vector<Check> check_model(const CiTNet<T>& model) {
  const auto& cfg = model.config();
  std::vector<Check> out;
  auto for_each_wacam = [&](auto fn) {
    for (std::size_t s = 0; s < model.stages.size(); ++s) {
      for (std::size_t i = 0; i < model.stages[s].size(); ++i) {
        fn(model.stages[s][i].attn1, "trans.wacam." + std::to_string(s) + "." + std::to_string(2 * i));
        fn(model.stages[s][i].attn2,
           "trans.wacam." + std::to_string(s) + "." + std::to_string(2 * i + 1));
      }
    }
  };

  out.push_back(run_check("wacam.rpb_shape", [&] {
    Outcome o{true, ""};
    std::int64_t n = 0;
    for_each_wacam([&](const Wacam<T>& w, const std::string& name) {
      const std::int64_t side = 2 * w.window() - 1;
      const Shape want{side * side, w.options().heads};
      ++n;
      if (o.passed && w.rpb.shape() != want) {
        o = {false, name + ".rpb is " + to_string(w.rpb.shape()) + ", expected " + to_string(want)};
      }
    });
    if (o.passed) o.detail = std::to_string(n) + " tables sized (2M-1)^2 x heads";
    return o;
  }));

  out.push_back(run_check("wacam.lambda_shape", [&] {
    Outcome o{true, "four fusion weights per layer"};
    for_each_wacam([&](const Wacam<T>& w, const std::string& name) {
      if (o.passed && w.lambda.shape() != Shape{4}) {
        o = {false, name + ".lambda is " + to_string(w.lambda.shape())};
      }
    });
    return o;
  }));

  out.push_back(run_check("ddconv.shapes", [&] {
    for (std::size_t s = 0; s < model.cnn_stages.size(); ++s) {
      for (int u = 0; u < 2; ++u) {
        const auto& conv = model.cnn_stages[s][u].conv;
        const auto& o = conv.options();
        const auto name = "cnn.stage." + std::to_string(s) + ".unit" + std::to_string(u);
        const Shape bank{o.out_channels, o.in_channels, o.kernel, o.kernel};
        if (static_cast<int>(conv.banks.size()) != cfg.ddconv_banks) {
          return Outcome{false, name + " has " + std::to_string(conv.banks.size()) + " banks"};
        }
        for (const auto& b : conv.banks) {
          if (b.shape() != bank) return Outcome{false, name + " bank is " + to_string(b.shape())};
        }
        const Shape offsets{2 * o.kernel * o.kernel, o.in_channels, o.kernel, o.kernel};
        if (o.deformable && conv.offset_head.weight.shape() != offsets) {
          return Outcome{false, name + " offset head is " + to_string(conv.offset_head.weight.shape())};
        }
      }
    }
    return Outcome{true, "banks [O,C,3,3] x n, offset heads [18,C,3,3]"};
  }));

  out.push_back(run_check("model.params_finite", [&] {
    for (const auto& [name, p] : model.params()) {
      for (T v : p.data()) {
        if (!std::isfinite(v)) return Outcome{false, name + " holds a non-finite value"};
      }
    }
    return Outcome{true, std::to_string(model.param_count()) + " parameters"};
  }));

  out.push_back(run_check("model.no_shared_storage", [&] {
    const auto shared = model.audit_sharing();
    if (shared.empty()) return Outcome{true, "every registry entry owns its storage"};
    return Outcome{false, "shared: " + shared.front()};
  }));
  return out;
}

template std::vector<Check> check_model(const CiTNet<float>&);
template std::vector<Check> check_model(const CiTNet<double>&);

// --- complexity --------------------------------------------------------------------------

Outcome closed_forms() {
  const auto msa = analysis::omega_msa(56, 56, 96).total();
  const auto wmsa = analysis::omega_wmsa(56, 56, 96, 7).total();
  const auto wacam = analysis::omega_wacam(56, 56, 96, 7).total();
  const bool ok = msa == Rational(2003828736) && wmsa == Rational(145108992) &&
                  wacam == Rational(21977088);
  return {ok, "MSA " + msa.str() + ", W-MSA " + wmsa.str() + ", W-ACAM " + wacam.str()};
}

Outcome omega_ordering() {
  int cases = 0;
  for (std::int64_t side : {14, 28, 56}) {
    for (std::int64_t c : {96, 192, 384, 768}) {
      const auto msa = analysis::omega_msa(side, side, c).total();
      const auto wmsa = analysis::omega_wmsa(side, side, c, 7).total();
      const auto wacam = analysis::omega_wacam(side, side, c, 7).total();
      if (!(wacam < wmsa && wmsa < msa)) {
        return {false, "order broken at hw=" + std::to_string(side * side) + " C=" +
                           std::to_string(c)};
      }
      ++cases;
    }
  }
  return {true, std::to_string(cases) + " (hw, C) cases ordered"};
}

Outcome omega_scaling() {
  using Fn = analysis::Omega (*)(std::int64_t, std::int64_t, std::int64_t, std::int64_t);
  const Fn fns[] = {
      [](std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t) {
        return analysis::omega_msa(h, w, c);
      },
      analysis::omega_wmsa, analysis::omega_wacam};
  for (auto fn : fns) {
    for (std::int64_t side : {7, 14, 56}) {
      for (std::int64_t c : {8, 96, 384}) {
        const auto a = fn(side, side, c, 7), b = fn(side, side, 2 * c, 7);
        if (!(b.quadratic == Rational(4) * a.quadratic && b.linear == Rational(2) * a.linear)) {
          return {false, "scaling broken at side " + std::to_string(side)};
        }
      }
    }
  }
  const auto single = analysis::omega_msa(7, 7, 96).total();
  if (!(single == analysis::omega_wmsa(7, 7, 96, 7).total())) {
    return {false, "MSA and W-MSA differ on a single window"};
  }
  return {true, "C^2 terms x4, linear terms x2; MSA = W-MSA when hw = M^2"};
}

// --- DDConv ----------------------------------------------------------------------------

Outcome ddconv_reduces_to_conv(std::uint64_t seed, int cases) {
  Rng rng(seed);
  std::uniform_int_distribution<int> ch(1, 4), side(3, 9), stride(1, 2);
  double worst = 0;
  for (int i = 0; i < cases; ++i) {
    DDConvOptions opt;
    opt.in_channels = ch(rng);
    opt.out_channels = ch(rng);
    opt.stride = stride(rng);
    opt.banks = 1;
    opt.deformable = true;
    DDConv<double> layer(opt, rng);
    const auto x = rand_d({2, opt.in_channels, side(rng), side(rng)}, rng);
    NoGradScope<double> no_grad;
    const auto offsets = layer.predict_offsets(x);
    for (double v : offsets.data()) {
      if (v != 0) return {false, "offset head does not start at zero"};
    }
    const auto got = layer.forward(x);
    const auto want = conv2d(x, layer.banks[0], TD(), {opt.stride, opt.padding});
    if (got.shape() != want.shape()) return {false, "shape " + to_string(got.shape())};
    worst = std::max(worst, max_abs_diff(got.data(), want.data()));
  }
  return {worst <= tol::ddconv_vs_conv,
          std::to_string(cases) + " cases, max abs diff " + fmt("%.3g", worst)};
}

// --- windows and attention -----------------------------------------------------------------

Outcome window_roundtrip(std::uint64_t seed) {
  Rng rng(seed);
  struct Case { std::int64_t h, w, m, s; };
  for (const Case c : {Case{8, 8, 4, 0}, Case{8, 8, 4, 2}, Case{6, 12, 3, 1}, Case{14, 14, 7, 3}}) {
    const auto grid = make_window_grid(c.h, c.w, c.m, c.s);
    const std::int64_t ch = 3;
    const auto x = rand_d({2, c.h, c.w, ch}, rng);
    const auto win = window_partition(x, grid);
    // Oracle: window token (wy, wx, ty, tx) reads pixel ((wy M + ty + s) % h, (wx M + tx + s) % w).
    const std::int64_t nwx = c.w / c.m, nw = grid.windows(), n = grid.tokens();
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t k = 0; k < nw; ++k) {
        for (std::int64_t t = 0; t < n; ++t) {
          const std::int64_t y = ((k / nwx) * c.m + t / c.m + c.s) % c.h;
          const std::int64_t xx = ((k % nwx) * c.m + t % c.m + c.s) % c.w;
          for (std::int64_t q = 0; q < ch; ++q) {
            if (win.at(((b * nw + k) * n + t) * ch + q) != x.at(((b * c.h + y) * c.w + xx) * ch + q)) {
              return {false, "partition misplaces a token at shift " + std::to_string(c.s)};
            }
          }
        }
      }
    }
    if (!bit_equal(window_merge(win, grid), x)) return {false, "merge does not invert partition"};
  }
  return {true, "partition matches the rolled tiling; merge inverts it exactly"};
}

Outcome mask_matches_regions() {
  for (std::int64_t m : {2, 4, 7}) {
    const std::int64_t side = 2 * m, s = m / 2;
    const auto grid = make_window_grid(side, side, m, s);
    const auto mask = attention_mask<double>(grid);
    const std::int64_t n = grid.tokens(), nwx = side / m;
    // Two tokens of a window share a region when neither or both wrapped
    // around during the roll, separately along each axis.
    for (std::int64_t k = 0; k < grid.windows(); ++k) {
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          auto wraps = [&](std::int64_t t) {
            const std::int64_t y = (k / nwx) * m + t / m, x = (k % nwx) * m + t % m;
            return std::pair{y + s >= side, x + s >= side};
          };
          const double want = wraps(i) == wraps(j) ? 0.0 : kMaskValue;
          if (mask.at((k * n + i) * n + j) != want) {
            return {false, "mask entry differs at M=" + std::to_string(m)};
          }
        }
      }
    }
  }
  if (attention_mask<double>(make_window_grid(8, 8, 4, 0)).defined()) {
    return {false, "unshifted grid produced a mask"};
  }
  return {true, "mask equals the brute-force wrap labelling for M in {2, 4, 7}"};
}

Outcome attention_rows(std::uint64_t seed) {
  Rng rng(seed);
  const auto layer = small_wacam(rng);
  WacamTrace<double> trace;
  NoGradScope<double> no_grad;
  layer.forward(scale(rand_d({2, 8, 8, 32}, rng), 3.0), &trace);
  double worst = 0;
  const char* names[] = {"spatial", "channel", "cross_h", "cross_w"};
  for (int b = 0; b < 4; ++b) {
    const auto& a = trace.attention[b];
    if (!a.defined()) return {false, std::string(names[b]) + " attention not captured"};
    const std::int64_t len = a.shape().back(), rows = a.numel() / len;
    for (std::int64_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::int64_t j = 0; j < len; ++j) s += a.at(r * len + j);
      worst = std::max(worst, std::abs(s - 1));
    }
  }
  return {worst <= tol::row_sum, "max |row sum - 1| " + fmt("%.3g", worst) + " over four branches"};
}

Outcome mask_suppression(std::uint64_t seed) {
  Rng rng(seed);
  const auto layer = small_wacam(rng);
  WacamTrace<double> trace;
  NoGradScope<double> no_grad;
  const std::int64_t batch = 2;
  layer.forward(scale(rand_d({batch, 8, 8, 32}, rng), 3.0), &trace);
  const auto& grid = layer.grid();
  const auto& a = trace.attention[0];  // [B nW, H, N, N]
  const std::int64_t nw = grid.windows(), n = grid.tokens(), heads = a.dim(1);
  double worst = 0;
  std::int64_t pairs = 0;
  for (std::int64_t bw = 0; bw < batch * nw; ++bw) {
    const std::int64_t k = bw % nw;
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
          if (grid.region[k * n + i] == grid.region[k * n + j]) continue;
          worst = std::max(worst, a.at(((bw * heads + h) * n + i) * n + j));
          ++pairs;
        }
      }
    }
  }
  if (pairs == 0) return {false, "no cross-region pairs in the test grid"};
  return {worst < tol::masked_weight,
          std::to_string(pairs) + " cross-region weights, max " + fmt("%.3g", worst)};
}

Outcome fuse_selects_branch(std::uint64_t seed) {
  Rng rng(seed);
  const auto layer = small_wacam(rng);
  std::array<TD, 4> outs;
  for (auto& o : outs) o = rand_d({8, 16, 4}, rng);
  const auto lambda = layer.lambda.mutable_data();
  NoGradScope<double> no_grad;
  for (int b = 0; b < 4; ++b) {
    for (int i = 0; i < 4; ++i) lambda[i] = i == b ? 1.0 : 0.0;
    if (!bit_equal(layer.fuse(outs), outs[b])) {
      return {false, "one-hot lambda " + std::to_string(b) + " does not return its branch"};
    }
  }
  return {true, "one-hot lambdas return the selected branch bit for bit"};
}

Outcome lambda_gradient(std::uint64_t seed) {
  Rng rng(seed);
  const auto layer = small_wacam(rng);
  std::array<TD, 4> outs;
  for (auto& o : outs) o = rand_d({8, 16, 4}, rng);
  std::copy_n(rand_d({4}, rng).data().begin(), 4, layer.lambda.mutable_data().begin());
  const auto r = rand_d({8, 16, 4}, rng);
  layer.lambda.zero_grad();
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(layer.fuse(outs), r)));
  }
  double worst = 0;
  for (int i = 0; i < 4; ++i) {
    double want = 0;
    for (std::int64_t j = 0; j < r.numel(); ++j) want += r.at(j) * outs[i].at(j);
    const double got = layer.lambda.grad()[i];
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  }
  return {worst <= tol::lambda_grad,
          "dL/dlambda_i vs <dL/dOut, Out_i>: max rel err " + fmt("%.3g", worst)};
}

// --- blocks --------------------------------------------------------------------------------

Outcome block_identity(std::uint64_t seed) {
  Rng rng(seed);
  auto block = small_block(rng);
  const auto x = rand_d({2, 4, 4, 16}, rng);
  NoGradScope<double> no_grad;
  zero(block.attn2.out);
  zero(block.mlp1.project);
  zero(block.mlp2.project);
  // Only the first attention path left: x + W-ACAM(LN(x)).
  const auto partial = add(x, block.attn1.forward(block.norm1(x)));
  if (!bit_equal(block.forward(x), partial)) {
    return {false, "single live path differs from x + W-ACAM(LN(x))"};
  }
  zero(block.attn1.out);
  if (!bit_equal(block.forward(x), x)) return {false, "all paths zeroed but output != input"};
  return {true, "zeroed paths give the exact identity; one live path gives x + f(LN(x))"};
}

Outcome block_order() {
  Rng rng(1);
  const auto block = small_block(rng);
  std::vector<std::string> trace;
  NoGradScope<double> no_grad;
  block.forward(rand_d({1, 4, 4, 16}, rng), &trace);
  const std::vector<std::string> want = {"LN", "W-ACAM", "ADD", "LN", "LPM",     "ADD",
                                         "LN", "SW-ACAM", "ADD", "LN", "LPM", "ADD"};
  std::string seen;
  for (const auto& s : trace) seen += (seen.empty() ? "" : " ") + s;
  return {trace == want, seen};
}

Outcome lpm_economy() {
  std::ostringstream os;
  for (const auto* v : {"T", "B"}) {
    for (const auto& s : ModelConfig::preset(v).plan()) {
      const auto lpm = lpm_param_count(s.channels, 4), mlp = mlp_param_count(s.channels, 4);
      Rng rng(1);
      nn::ParamList<float> ps;
      Lpm<float>({s.channels, 4, true}, rng).params("", ps);
      if (nn::count(ps) != lpm) return {false, "registry disagrees with the formula"};
      if (!(lpm < mlp)) {
        return {false, "LPM " + std::to_string(lpm) + " >= MLP " + std::to_string(mlp)};
      }
    }
  }
  os << "LPM < MLP at every stage width of T and B; C=96: " << lpm_param_count(96, 4) << " < "
     << mlp_param_count(96, 4);
  return {true, os.str()};
}

// --- whole model -----------------------------------------------------------------------------

Outcome flops_match_counter(const ModelConfig& cfg) {
  const CiTNet<float> model(cfg, 1);
  Rng rng(1);
  const auto x = Tensor<float>::uniform({1, cfg.in_channels, cfg.image_size, cfg.image_size}, rng,
                                        0, 1);
  NoGradScope<float> no_grad;
  FlopCounter counter;
  model.forward(x);
  const double analytic = analysis::count_flops(cfg).total;
  const double measured = static_cast<double>(counter.total());
  const double params = analysis::count_params(cfg).total;
  const bool ok = analytic == measured && params == static_cast<double>(model.param_count());
  return {ok, "analytic " + fmt("%.0f", analytic) + " vs counted " + fmt("%.0f", measured) +
                  " FLOPs"};
}

Outcome forward_shapes(const ModelConfig& cfg, std::uint64_t seed) {
  const CiTNet<float> model(cfg, seed);
  Rng rng(seed);
  const auto x = Tensor<float>::uniform({1, cfg.in_channels, cfg.image_size, cfg.image_size}, rng,
                                        0, 1);
  ForwardTrace trace;
  NoGradScope<float> no_grad;
  const auto y = model.forward(x, &trace);
  const Shape want{1, cfg.n_classes, cfg.image_size, cfg.image_size};
  if (y.shape() != want) return {false, "logits " + to_string(y.shape())};
  for (const auto& s : cfg.plan()) {
    const auto i = std::to_string(s.index);
    const auto* t = trace.find("trans." + i);
    const auto* c = trace.find("cnn." + i);
    if (!t || *t != Shape{1, s.resolution, s.resolution, s.channels}) {
      return {false, "trans." + i + " " + (t ? to_string(*t) : "missing")};
    }
    if (!c || *c != Shape{1, s.channels, s.resolution, s.resolution}) {
      return {false, "cnn." + i + " " + (c ? to_string(*c) : "missing")};
    }
  }
  for (float v : y.data()) {
    if (!std::isfinite(v)) return {false, "non-finite logits"};
  }
  return {true, "stage shapes follow the plan; logits " + to_string(y.shape())};
}

Outcome paper_sizes() {
  std::ostringstream os;
  bool ok = true;
  for (const auto* v : {"T", "B"}) {
    const auto cfg = ModelConfig::preset(v);
    analysis::PaperTarget target;
    analysis::paper_target(v, target);
    const double pm = analysis::count_params(cfg).total / 1e6;
    const double gf = analysis::count_flops(cfg).total / 1e9;
    const double pr = pm / target.params_m, fr = gf / target.gflops;
    const auto within = [](double r) {
      return r <= tol::size_factor && r >= 1 / tol::size_factor;
    };
    ok = ok && within(pr) && within(fr);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s%s %.2fM (x%.2f of %.2fM) %.2fG (x%.2f of %.2fG)",
                  os.tellp() > 0 ? "; " : "", v, pm, pr, target.params_m, gf, fr, target.gflops);
    os << buf;
  }
  return {ok, os.str()};
}

// --- gradient oracles --------------------------------------------------------------------------

const std::vector<std::string>& grad_ops() {
  static const std::vector<std::string> ops = {"ddconv",  "spatial",    "channel",   "cross_h",
                                               "cross_w", "fuse",       "lpm",       "block_pair",
                                               "dice_loss", "end_to_end"};
  return ops;
}

namespace {

NamedTensors as_inputs(const nn::ParamList<double>& params) {
  return NamedTensors(params.begin(), params.end());
}

Outcome grad_outcome(const GradCheckReport& r, double limit) {
  std::int64_t checked = 0;
  for (const auto& e : r.inputs) checked += e.checked;
  return {r.max_rel_err < limit, "max rel err " + fmt("%.3g", r.max_rel_err) + " (" +
                                     r.worst_input + ", " + std::to_string(checked) + " elements)"};
}

Outcome project_and_check(const std::function<TD()>& f, const NamedTensors& inputs,
                          std::uint64_t seed, std::size_t max_elements = 0,
                          double limit = tol::grad_rel) {
  GradCheckOptions opt;
  opt.tol = limit;
  opt.seed = seed;
  opt.max_elements = max_elements;
  return grad_outcome(grad_check([&] { return random_projection(f(), seed + 1000); }, inputs, opt),
                      limit);
}

// Moves sampling positions off the integer lattice, where bilinear
// interpolation has kinks that central differences cannot straddle.
void perturb_offsets(const DDConv<double>& layer, Rng& rng, double scale_) {
  for (const auto& t : {layer.offset_head.weight, layer.offset_head.bias}) {
    for (auto& v : t.mutable_data()) v = scale_ * std::uniform_real_distribution<double>(-1, 1)(rng);
  }
}

}  // namespace

Outcome grad_op(const std::string& op, std::uint64_t seed) {
  Rng rng(seed);
  if (op == "ddconv") {
    DDConvOptions opt;
    opt.in_channels = 3;
    opt.out_channels = 2;
    opt.banks = 3;
    opt.stride = seed % 2 == 0 ? 2 : 1;
    const DDConv<double> layer(opt, rng);
    perturb_offsets(layer, rng, 0.2);
    const auto x = rand_d({2, 3, 5, 5}, rng);
    nn::ParamList<double> ps;
    layer.params("ddconv", ps);
    auto inputs = as_inputs(ps);
    inputs.emplace_back("x", x);
    return project_and_check([&] { return layer.forward(x); }, inputs, seed);
  }
  if (op == "spatial" || op == "channel" || op == "cross_h" || op == "cross_w" || op == "fuse") {
    const auto layer = small_wacam(rng);
    const std::int64_t bw = layer.grid().windows(), n = layer.grid().tokens(), c = layer.reduced();
    const auto z = rand_d({bw, n, c}, rng);
    nn::ParamList<double> ps;
    NamedTensors inputs{{"z", z}};
    if (op == "spatial") {
      const auto mask = attention_mask<double>(layer.grid());
      layer.spatial_qkv.params("qkv", ps);
      ps.emplace_back("rpb", layer.rpb);
      auto more = as_inputs(ps);
      inputs.insert(inputs.end(), more.begin(), more.end());
      return project_and_check([&] { return layer.branch_spatial(z, mask); }, inputs, seed);
    }
    if (op == "channel") {
      layer.channel_qkv.params("qkv", ps);
      auto more = as_inputs(ps);
      inputs.insert(inputs.end(), more.begin(), more.end());
      return project_and_check([&] { return layer.branch_channel(z); }, inputs, seed);
    }
    if (op == "cross_h" || op == "cross_w") {
      const bool h = op == "cross_h";
      const auto& p = h ? layer.cross_h : layer.cross_w;
      p.q.params("q", ps);
      p.k.params("k", ps);
      p.v.params("v", ps);
      p.out.params("out", ps);
      auto more = as_inputs(ps);
      inputs.insert(inputs.end(), more.begin(), more.end());
      const auto axis = h ? Branch::CrossH : Branch::CrossW;
      return project_and_check([&] { return layer.branch_cross(z, axis); }, inputs, seed);
    }
    std::array<TD, 4> outs;
    inputs.clear();
    for (int i = 0; i < 4; ++i) {
      outs[i] = rand_d({bw, n, c}, rng);
      inputs.emplace_back("out" + std::to_string(i + 1), outs[i]);
    }
    std::copy_n(rand_d({4}, rng).data().begin(), 4, layer.lambda.mutable_data().begin());
    inputs.emplace_back("lambda", layer.lambda);
    return project_and_check([&] { return layer.fuse(outs); }, inputs, seed);
  }
  if (op == "lpm") {
    const Lpm<double> layer({8, 4, true}, rng);
    const auto x = rand_d({2, 4, 4, 8}, rng);
    nn::ParamList<double> ps;
    layer.params("lpm", ps);
    auto inputs = as_inputs(ps);
    inputs.emplace_back("x", x);
    return project_and_check([&] { return layer.forward(x); }, inputs, seed);
  }
  if (op == "block_pair") {
    const auto block = small_block(rng);
    const auto x = rand_d({1, 4, 4, 16}, rng);
    nn::ParamList<double> ps;
    block.params("block", ps);
    auto inputs = as_inputs(ps);
    inputs.emplace_back("x", x);
    return project_and_check([&] { return block.forward(x); }, inputs, seed, 16);
  }
  if (op == "dice_loss") {
    const auto pred = rand_d({2, 1, 6, 6}, rng, 0.05, 0.95);
    std::vector<double> m(72);
    for (auto& v : m) v = std::uniform_real_distribution<double>(0, 1)(rng) < 0.4 ? 1.0 : 0.0;
    const auto mask = TD::from({2, 1, 6, 6}, m);
    return project_and_check([&] { return train::dice_loss(pred, mask); }, {{"pred", pred}}, seed);
  }
  if (op == "end_to_end") {
    const auto cfg = ModelConfig::preset("gradcheck");
    const CiTNet<double> model(cfg, seed);
    for (const auto& stage : model.cnn_stages) {
      for (const auto& unit : stage) perturb_offsets(unit.conv, rng, 0.05);
    }
    const auto x = rand_d({1, cfg.in_channels, cfg.image_size, cfg.image_size}, rng, 0, 1);
    const auto mask = TD::from(
        {1, 1, cfg.image_size, cfg.image_size},
        std::vector<double>(static_cast<std::size_t>(cfg.image_size * cfg.image_size), 0.0));
    auto m = mask.mutable_data();
    for (std::int64_t i = 0; i < mask.numel(); ++i) m[i] = (i / cfg.image_size) % 3 == 0;
    auto inputs = as_inputs(model.params());
    inputs.emplace_back("x", x);
    GradCheckOptions opt;
    opt.tol = tol::grad_rel_end_to_end;
    opt.seed = seed;
    opt.max_elements = 4;
    // Every upstream parameter moves thousands of sampling positions at once;
    // a short step keeps lattice crossings out of the stencil.
    opt.h = 1e-7;
    const auto report = grad_check(
        [&] { return train::combined_loss(sigmoid(model.forward(x)), mask); }, inputs, opt);
    return grad_outcome(report, tol::grad_rel_end_to_end);
  }
  throw UsageError("grad_op: unknown operator '" + op + "'");
}

// --- learnability ------------------------------------------------------------------------------

Outcome learnability(std::uint64_t seed) {
  train::SyntheticOptions data;
  data.n = 4;
  data.size = 56;
  const auto samples = train::gen_synthetic(seed, data);
  train::TrainOptions opt;
  opt.steps = tol::learn_steps;
  opt.lr = 1e-3;
  opt.stop_dice = tol::learn_dice;
  std::vector<train::History> runs;
  for (int r = 0; r < 2; ++r) {
    CiTNet<float> model(ModelConfig::preset("toy"), seed);
    runs.push_back(train::train_toy(model, samples, opt));
  }
  const auto& h = runs[0];
  const bool same = h.hash() == runs[1].hash();
  const double dice = h.entries.empty() ? 0 : h.entries.back().dice;
  std::string detail = "Dice " + fmt("%.4f", dice) + " after " +
                       std::to_string(h.entries.size()) + " steps; rerun hash " +
                       (same ? "identical (" + h.hash() + ")" : "differs");
  return {h.reached && same, detail};
}

// --- suite -------------------------------------------------------------------------------------

Level parse_level(const std::string& s) {
  if (s == "fast") return Level::Fast;
  if (s == "full") return Level::Full;
  throw UsageError("level: expected fast or full, got '" + s + "'");
}

Report run_suite(const ModelConfig& cfg, Level level, std::uint64_t seed) {
  cfg.validate();
  Report r;
  auto add = [&](const std::string& name, const std::function<Outcome()>& fn) {
    r.checks.push_back(run_check(name, fn));
  };
  add("complexity.closed_forms", closed_forms);
  add("complexity.ordering", omega_ordering);
  add("complexity.scaling", omega_scaling);
  add("ddconv.reduces_to_conv", [&] { return ddconv_reduces_to_conv(seed); });
  add("wacam.window_roundtrip", [&] { return window_roundtrip(seed); });
  add("wacam.mask_regions", mask_matches_regions);
  add("wacam.attention_rows", [&] { return attention_rows(seed); });
  add("wacam.mask_suppression", [&] { return mask_suppression(seed); });
  add("wacam.fuse_one_hot", [&] { return fuse_selects_branch(seed); });
  add("wacam.lambda_gradient", [&] { return lambda_gradient(seed); });
  add("block.identity", [&] { return block_identity(seed); });
  add("block.order", block_order);
  add("lpm.economy", lpm_economy);
  {
    const CiTNet<float> model(cfg, seed);
    for (auto& c : check_model(model)) r.checks.push_back(std::move(c));
  }
  add("model.forward_shapes", [&] { return forward_shapes(cfg, seed); });
  add("analysis.flops_match_counter", [&] { return flops_match_counter(cfg); });

  if (level == Level::Full) {
    for (const auto& op : grad_ops()) {
      for (std::uint64_t s = seed; s < seed + 3; ++s) {
        add("grad." + op + ".seed" + std::to_string(s), [&] { return grad_op(op, s); });
      }
    }
  }
  return r;
}

}  // namespace citnet::verify
