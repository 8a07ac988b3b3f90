#pragma once

// Losses, segmentation metrics, the synthetic blob dataset and the toy
// training loop.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "citnet/citnet.hpp"
#include "citnet/config.hpp"

namespace citnet::train {

/// 1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s), pooled over every element.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& mask, T smooth = 1);
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& mask);
/// dice_loss + mse_loss, equally weighted.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& mask, T smooth = 1);

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct Metrics {
  double di = 0, ja = 0, se = 0, ac = 0, sp = 0, voe = 0;
  std::optional<double> rvd;  // undefined when the ground truth is empty
};

struct MetricsReport {
  std::vector<Metrics> samples;
  Metrics mean;  // rvd averages the defined entries only
};

/// Binary masks of equal length; any nonzero value is foreground.
Confusion confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
/// Ratios with an empty denominator (nothing to get wrong) score 1.
Metrics compute_metrics(const Confusion& c);
Metrics compute_metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);
MetricsReport summarize(std::vector<Metrics> samples);
Json to_json(const Metrics& m);
Json to_json(const MetricsReport& r);

struct SegSample {
  Tensor<float> image;  // [in_channels, H, W], values in [0, 1]
  Tensor<float> mask;   // [H, W], values in {0, 1}
};

struct SyntheticOptions {
  std::int64_t n = 4;
  std::int64_t size = 56;
  std::int64_t channels = 1;
  double background = 0.3;
  double contrast = 0.4;  // foreground minus background
  double noise = 0.08;    // uniform amplitude, kept below contrast / 2
  double blur = 1.5;      // edge softness in pixels; 0 gives hard edges
  double min_area = 0.05;
  double max_area = 0.40;
};

/// 1-3 ellipses per image on a noisy background; the mask is the exact union
/// of the ellipses. Deterministic in `seed`.
std::vector<SegSample> gen_synthetic(std::uint64_t seed, const SyntheticOptions& opt);

void save_samples(const std::filesystem::path& dir, const std::vector<SegSample>& samples);
std::vector<SegSample> load_samples(const std::filesystem::path& dir);

/// Stacks samples into images [B, C, H, W] and masks [B, 1, H, W].
std::pair<Tensor<float>, Tensor<float>> stack(const std::vector<SegSample>& samples);

class Adam {
 public:
  Adam(nn::ParamList<float> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void zero_grad();
  void step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  nn::ParamList<float> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct TrainOptions {
  std::int64_t steps = 300;
  double lr = 1e-3;
  std::int64_t plateau_patience = 10;  // steps without a new best loss before halving lr
  double stop_dice = 0;                // stop once train Dice exceeds this; 0 disables
};

struct HistoryEntry {
  std::int64_t step = 0;
  double loss = 0;
  double dice = 0;  // thresholded Dice of this step's forward pass
  double lr = 0;
};

struct History {
  std::vector<HistoryEntry> entries;
  bool reached = false;  // stop_dice was exceeded
  Json to_json() const;
  /// FNV-1a over the exact bit patterns of every entry.
  std::string hash() const;
};

/// Full-batch training on `samples` with sigmoid outputs and combined_loss.
/// One step is one epoch. Throws NumericError if the loss stops being finite.
History train_toy(CiTNet<float>& model, const std::vector<SegSample>& samples,
                  const TrainOptions& opt);

/// Thresholds sigmoid(logits) at 0.5 and scores every sample.
MetricsReport evaluate(const CiTNet<float>& model, const std::vector<SegSample>& samples);

}  // namespace citnet::train
