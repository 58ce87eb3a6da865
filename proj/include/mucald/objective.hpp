#pragma once
// Composite training loss and its warm-up / ramp-up weight schedule.

#include <cstdint>
#include <string>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

struct LossWeights {
  double seg = 1.0;
  double proxy = 0.1;
  double diff = 0.1;
  double klu = 0.01;
  double klz = 0.01;
  double adv = 0.1;

  void validate() const;
  LossWeights scaled(double f) const;
};

struct ScheduleState {
  int round = 1;
  int epoch = 1;  // 1-based local epoch
  int warmup_epochs = 2;
  int rampup_epochs = 3;

  // 0 in warm-up, e/R in ramp-up epoch e, 1 afterwards.
  double ramp() const;
};

struct LossBreakdown {
  double seg = 0.0;
  double proxy1 = 0.0, proxy2 = 0.0;
  double diff1 = 0.0, diff2 = 0.0;
  double klu = 0.0, klz = 0.0;
  double adv1 = 0.0, adv2 = 0.0;
  double total = 0.0;

  static const std::vector<std::string>& column_names();
  std::vector<double> columns() const;
};

// One-hot target of class ids with C channels; throws DataError for ids >= C.
Tensor one_hot(const std::vector<std::uint8_t>& labels, std::size_t batch, std::size_t classes,
               std::size_t h, std::size_t w);

// 1 - mean over classes of (2 sum p g + eps) / (sum p + sum g + eps).
// probs: [B, C, H, W]; labels row-major [B, H, W]. `grad` receives d/dprobs.
double soft_dice_loss(const Tensor& probs, const std::vector<std::uint8_t>& labels,
                      Tensor* grad = nullptr);

// Mean squared error over entries of non-empty samples.
double proxy_loss(const std::vector<double>& pred, const std::vector<double>& truth);

// Fills `total` with the weighted sum; throws NumericError naming the first
// non-finite component.
LossBreakdown total_loss(LossBreakdown parts, const LossWeights& w);

// Warm-up leaves only the segmentation weight; ramp-up scales proxy and adv by
// e/R while diff and KL weights switch on fully; later epochs use `base`.
LossWeights effective_weights(const ScheduleState& s, const LossWeights& base);

}  // namespace mucald
