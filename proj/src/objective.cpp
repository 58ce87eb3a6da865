#include "mucald/objective.hpp"

#include <cmath>

#include "mucald/errors.hpp"

namespace mucald {
namespace {

constexpr double kDiceEps = 1e-6;

}  // namespace

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {{"seg", seg}, {"proxy", proxy}, {"diff", diff},
                                                {"klu", klu}, {"klz", klz},     {"adv", adv}};
  for (const auto& [name, v] : all) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("loss.") + name + " must be finite and >= 0");
    }
  }
}

LossWeights LossWeights::scaled(double f) const {
  return {seg * f, proxy * f, diff * f, klu * f, klz * f, adv * f};
}

double ScheduleState::ramp() const {
  if (epoch <= warmup_epochs) return 0.0;
  const int e = epoch - warmup_epochs;
  if (rampup_epochs > 0 && e <= rampup_epochs) {
    return static_cast<double>(e) / static_cast<double>(rampup_epochs);
  }
  return 1.0;
}

const std::vector<std::string>& LossBreakdown::column_names() {
  static const std::vector<std::string> names = {
      "L_seg", "L_proxy1", "L_proxy2", "L_diff1", "L_diff2",
      "L_KLu", "L_KLz",    "L_adv1",   "L_adv2",  "L_total"};
  return names;
}

std::vector<double> LossBreakdown::columns() const {
  return {seg, proxy1, proxy2, diff1, diff2, klu, klz, adv1, adv2, total};
}

Tensor one_hot(const std::vector<std::uint8_t>& labels, std::size_t batch, std::size_t classes,
               std::size_t h, std::size_t w) {
  if (labels.size() != batch * h * w) throw DimensionError("one_hot: label count mismatch");
  Tensor out({batch, classes, h, w});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t p = 0; p < h * w; ++p) {
      const std::size_t c = labels[n * h * w + p];
      if (c >= classes) {
        throw DataError("class id " + std::to_string(c) + " >= " + std::to_string(classes) +
                        " classes");
      }
      out[(n * classes + c) * h * w + p] = 1.0;
    }
  return out;
}

double soft_dice_loss(const Tensor& probs, const std::vector<std::uint8_t>& labels,
                      Tensor* grad) {
  if (probs.rank() != 4) throw DimensionError("soft_dice_loss: probs must be [B, C, H, W]");
  const std::size_t b = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  const Tensor g = one_hot(labels, b, c, probs.dim(2), probs.dim(3));
  std::vector<double> inter(c, 0.0), total(c, 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t base = (n * c + k) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        inter[k] += probs[base + p] * g[base + p];
        total[k] += probs[base + p] + g[base + p];
      }
    }
  double dice = 0.0;
  for (std::size_t k = 0; k < c; ++k) dice += (2.0 * inter[k] + kDiceEps) / (total[k] + kDiceEps);
  dice /= static_cast<double>(c);
  if (grad) {
    *grad = Tensor(probs.shape());
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t k = 0; k < c; ++k) {
        const double s = total[k] + kDiceEps, num = 2.0 * inter[k] + kDiceEps;
        const std::size_t base = (n * c + k) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          (*grad)[base + p] =
              -(2.0 * g[base + p] * s - num) / (s * s) / static_cast<double>(c);
        }
      }
  }
  return 1.0 - dice;
}

double proxy_loss(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("proxy_loss: lengths " + std::to_string(pred.size()) + " and " +
                         std::to_string(truth.size()));
  }
  if (pred.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

LossBreakdown total_loss(LossBreakdown p, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"L_seg", p.seg},   {"L_proxy1", p.proxy1}, {"L_proxy2", p.proxy2},
      {"L_diff1", p.diff1}, {"L_diff2", p.diff2}, {"L_KLu", p.klu},
      {"L_KLz", p.klz},   {"L_adv1", p.adv1},     {"L_adv2", p.adv2}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component ") + name);
  }
  p.total = w.seg * p.seg + w.proxy * (p.proxy1 + p.proxy2) + w.diff * (p.diff1 + p.diff2) +
            w.klu * p.klu + w.klz * p.klz + w.adv * (p.adv1 + p.adv2);
  return p;
}

LossWeights effective_weights(const ScheduleState& s, const LossWeights& base) {
  if (s.epoch <= s.warmup_epochs) return {base.seg, 0.0, 0.0, 0.0, 0.0, 0.0};
  LossWeights w = base;
  const double r = s.ramp();
  w.proxy *= r;
  w.adv *= r;
  return w;
}

}  // namespace mucald
