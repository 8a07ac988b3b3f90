#include "citnet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "citnet/io.hpp"
#include "citnet/ops.hpp"

namespace citnet::train {

// --- losses ------------------------------------------------------------------------

namespace {

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": prediction " + to_string(a.shape()) +
                         " vs mask " + to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& mask, T smooth) {
  require_same("dice_loss", pred, mask);
  const auto overlap = add_scalar(scale(sum(mul(pred, mask)), T(2)), smooth);
  const auto volume = add_scalar(add(sum(pred), sum(mask)), smooth);
  return add_scalar(scale(div(overlap, volume), T(-1)), T(1));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& mask) {
  require_same("mse_loss", pred, mask);
  const auto d = sub(pred, mask);
  return mean(mul(d, d));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& mask, T smooth) {
  return add(dice_loss(pred, mask, smooth), mse_loss(pred, mask));
}

template Tensor<float> dice_loss(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> dice_loss(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> mse_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mse_loss(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> combined_loss(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> combined_loss(const Tensor<double>&, const Tensor<double>&, double);

// --- metrics -----------------------------------------------------------------------

Confusion confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("confusion: " + std::to_string(pred.size()) + " predicted vs " +
                         std::to_string(gt.size()) + " reference pixels");
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {
double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

Metrics compute_metrics(const Confusion& c) {
  Metrics m;
  m.di = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.ja = ratio(c.tp, c.tp + c.fp + c.fn);
  m.se = ratio(c.tp, c.tp + c.fn);
  m.sp = ratio(c.tn, c.tn + c.fp);
  m.ac = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  m.voe = 1.0 - m.ja;
  const std::int64_t gt = c.tp + c.fn, pred = c.tp + c.fp;
  if (gt > 0) m.rvd = static_cast<double>(pred - gt) / static_cast<double>(gt);
  return m;
}

Metrics compute_metrics(const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& gt) {
  return compute_metrics(confusion(pred, gt));
}

MetricsReport summarize(std::vector<Metrics> samples) {
  MetricsReport r;
  r.samples = std::move(samples);
  if (r.samples.empty()) return r;
  double rvd = 0;
  int defined = 0;
  for (const auto& s : r.samples) {
    r.mean.di += s.di;
    r.mean.ja += s.ja;
    r.mean.se += s.se;
    r.mean.ac += s.ac;
    r.mean.sp += s.sp;
    r.mean.voe += s.voe;
    if (s.rvd) {
      rvd += *s.rvd;
      ++defined;
    }
  }
  const double n = static_cast<double>(r.samples.size());
  r.mean.di /= n;
  r.mean.ja /= n;
  r.mean.se /= n;
  r.mean.ac /= n;
  r.mean.sp /= n;
  r.mean.voe /= n;
  if (defined > 0) r.mean.rvd = rvd / defined;
  return r;
}

Json to_json(const Metrics& m) {
  Json j = {{"DI", m.di}, {"JA", m.ja}, {"SE", m.se}, {"AC", m.ac}, {"SP", m.sp}, {"VOE", m.voe}};
  j["RVD"] = m.rvd ? Json(*m.rvd) : Json(nullptr);
  return j;
}

Json to_json(const MetricsReport& r) {
  Json samples = Json::array();
  for (const auto& s : r.samples) samples.push_back(to_json(s));
  return {{"mean", to_json(r.mean)}, {"samples", samples}};
}

// --- synthetic data ----------------------------------------------------------------

namespace {

struct Ellipse {
  double cy, cx, a, b, cos_t, sin_t;

  // Normalized radius: 1 on the boundary.
  double rho(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = dx * cos_t + dy * sin_t, v = -dx * sin_t + dy * cos_t;
    return std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
  }
};

void validate(const SyntheticOptions& opt) {
  auto bad = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (opt.n < 1) bad("n", "must be positive");
  if (opt.size < 8) bad("size", "must be at least 8");
  if (opt.channels < 1) bad("channels", "must be positive");
  if (!(opt.contrast > 0)) bad("contrast", "must be positive");
  if (!(opt.noise >= 0 && opt.noise < opt.contrast / 2)) bad("noise", "must lie in [0, contrast/2)");
  if (opt.background - opt.noise < 0 || opt.background + opt.contrast + opt.noise > 1) {
    bad("background", "intensities would leave [0, 1]");
  }
  if (!(opt.blur >= 0)) bad("blur", "must be non-negative");
  if (!(opt.min_area > 0 && opt.min_area < opt.max_area && opt.max_area < 1)) {
    bad("min_area", "need 0 < min_area < max_area < 1");
  }
}

}  // namespace

std::vector<SegSample> gen_synthetic(std::uint64_t seed, const SyntheticOptions& opt) {
  validate(opt);
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::int64_t s = opt.size, px = s * s;
  const double ds = static_cast<double>(s);
  std::vector<SegSample> out;

  for (std::int64_t n = 0; n < opt.n; ++n) {
    std::vector<Ellipse> shapes;
    std::vector<float> mask(static_cast<std::size_t>(px));
    for (;;) {
      shapes.clear();
      const int count = 1 + static_cast<int>(unit(rng) * 3);
      for (int i = 0; i < count; ++i) {
        const double t = unit(rng) * std::numbers::pi;
        shapes.push_back({ds * (0.2 + 0.6 * unit(rng)), ds * (0.2 + 0.6 * unit(rng)),
                          ds * (0.08 + 0.17 * unit(rng)), ds * (0.08 + 0.17 * unit(rng)),
                          std::cos(t), std::sin(t)});
      }
      std::int64_t area = 0;
      for (std::int64_t y = 0; y < s; ++y) {
        for (std::int64_t x = 0; x < s; ++x) {
          bool inside = false;
          for (const auto& e : shapes) inside = inside || e.rho(double(y), double(x)) <= 1.0;
          mask[static_cast<std::size_t>(y * s + x)] = inside ? 1.0f : 0.0f;
          area += inside;
        }
      }
      const double frac = static_cast<double>(area) / static_cast<double>(px);
      if (frac >= opt.min_area && frac <= opt.max_area) break;
    }

    std::vector<float> image(static_cast<std::size_t>(opt.channels * px));
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        const std::size_t i = static_cast<std::size_t>(y * s + x);
        double level = mask[i];
        if (opt.blur > 0) {
          // Soft edge across the boundary; the hard mask still decides the side.
          level = 0;
          for (const auto& e : shapes) {
            const double d = (e.rho(double(y), double(x)) - 1.0) * std::min(e.a, e.b);
            level = std::max(level, 0.5 * (1.0 - std::tanh(d / opt.blur)));
          }
        }
        for (std::int64_t c = 0; c < opt.channels; ++c) {
          const double noise = opt.noise * (2 * unit(rng) - 1);
          image[static_cast<std::size_t>(c * px) + i] =
              static_cast<float>(opt.background + opt.contrast * level + noise);
        }
      }
    }
    out.push_back({Tensor<float>::from({opt.channels, s, s}, std::move(image)),
                   Tensor<float>::from({s, s}, std::move(mask))});
  }
  return out;
}

void save_samples(const std::filesystem::path& dir, const std::vector<SegSample>& samples) {
  io::Named<float> named;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    named.emplace_back("image." + std::to_string(i), samples[i].image);
    named.emplace_back("mask." + std::to_string(i), samples[i].mask);
  }
  io::save_dir(dir, named);
}

std::vector<SegSample> load_samples(const std::filesystem::path& dir) {
  const auto named = io::load_dir<float>(dir);
  std::vector<SegSample> out;
  for (std::size_t i = 0;; ++i) {
    const auto find = [&](const std::string& name) {
      for (const auto& [n, t] : named) {
        if (n == name) return t;
      }
      return Tensor<float>();
    };
    auto image = find("image." + std::to_string(i));
    auto mask = find("mask." + std::to_string(i));
    if (!image.defined() && !mask.defined()) break;
    if (!image.defined() || !mask.defined() || image.ndim() != 3 || mask.ndim() != 2 ||
        image.dim(1) != mask.dim(0) || image.dim(2) != mask.dim(1)) {
      throw io::FormatError("load_samples: sample " + std::to_string(i) + " is incomplete");
    }
    out.push_back({image, mask});
  }
  if (out.size() * 2 != named.size()) {
    throw io::FormatError("load_samples: unexpected entries in " + dir.string());
  }
  return out;
}

std::pair<Tensor<float>, Tensor<float>> stack(const std::vector<SegSample>& samples) {
  if (samples.empty()) throw UsageError("stack: no samples");
  const Shape is = samples[0].image.shape(), ms = samples[0].mask.shape();
  std::vector<float> images, masks;
  for (const auto& s : samples) {
    if (s.image.shape() != is || s.mask.shape() != ms) {
      throw DimensionError("stack: samples differ in shape");
    }
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    masks.insert(masks.end(), s.mask.data().begin(), s.mask.data().end());
  }
  const auto b = static_cast<std::int64_t>(samples.size());
  return {Tensor<float>::from({b, is[0], is[1], is[2]}, std::move(images)),
          Tensor<float>::from({b, 1, ms[0], ms[1]}, std::move(masks))};
}

// --- optimizer ---------------------------------------------------------------------

Adam::Adam(nn::ParamList<float> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void Adam::zero_grad() {
  for (const auto& [name, p] : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1 - std::pow(beta1_, double(t_)), c2 = 1 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    const auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
      w[j] -= static_cast<float>(lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_));
    }
  }
}

// --- training ----------------------------------------------------------------------

Json History::to_json() const {
  Json steps = Json::array();
  for (const auto& e : entries) {
    steps.push_back({{"step", e.step}, {"loss", e.loss}, {"dice", e.dice}, {"lr", e.lr}});
  }
  return {{"steps", steps}, {"reached", reached}, {"hash", hash()}};
}

std::string History::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries) {
    mix(static_cast<std::uint64_t>(e.step));
    mix(std::bit_cast<std::uint64_t>(e.loss));
    mix(std::bit_cast<std::uint64_t>(e.dice));
    mix(std::bit_cast<std::uint64_t>(e.lr));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::vector<std::uint8_t> binarize(std::span<const float> probs, std::size_t begin,
                                   std::size_t count) {
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = probs[begin + i] > 0.5f;
  return out;
}

std::vector<Metrics> score(const Tensor<float>& probs, const Tensor<float>& masks) {
  const auto b = static_cast<std::size_t>(probs.dim(0));
  const std::size_t px = static_cast<std::size_t>(probs.numel()) / b;
  std::vector<Metrics> out;
  for (std::size_t i = 0; i < b; ++i) {
    out.push_back(compute_metrics(binarize(probs.data(), i * px, px),
                                  binarize(masks.data(), i * px, px)));
  }
  return out;
}

void require_single_class(const CiTNet<float>& model) {
  if (model.config().n_classes != 1) {
    throw UsageError("train/eval: the toy harness trains binary models (n_classes = 1)");
  }
}

}  // namespace

History train_toy(CiTNet<float>& model, const std::vector<SegSample>& samples,
                  const TrainOptions& opt) {
  require_single_class(model);
  if (opt.steps < 0 || !(opt.lr >= 0)) throw UsageError("train_toy: steps and lr must be >= 0");
  const auto [images, masks] = stack(samples);
  Adam adam(model.params(), opt.lr);
  History history;
  double best = INFINITY;
  std::int64_t stale = 0;

  for (std::int64_t step = 0; step < opt.steps; ++step) {
    Tape<float> tape;
    Tensor<float> probs, loss;
    adam.zero_grad();
    {
      TapeScope<float> scope(tape);
      probs = sigmoid(model.forward(images));
      loss = combined_loss(probs, masks);
      if (!std::isfinite(loss.item())) {
        throw NumericError("train_toy: loss is " + std::to_string(loss.item()) + " at step " +
                           std::to_string(step));
      }
      tape.backward(loss);
    }
    const auto report = summarize(score(probs, masks));
    history.entries.push_back({step, loss.item(), report.mean.di, adam.lr()});
    adam.step();

    if (loss.item() < best) {
      best = loss.item();
      stale = 0;
    } else if (++stale >= opt.plateau_patience) {
      adam.set_lr(adam.lr() / 2);
      stale = 0;
    }
    if (opt.stop_dice > 0 && report.mean.di > opt.stop_dice) {
      history.reached = true;
      break;
    }
  }
  return history;
}

MetricsReport evaluate(const CiTNet<float>& model, const std::vector<SegSample>& samples) {
  require_single_class(model);
  const auto [images, masks] = stack(samples);
  NoGradScope<float> no_grad;
  return summarize(score(sigmoid(model.forward(images)), masks));
}

}  // namespace citnet::train
