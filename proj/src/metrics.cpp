#include "mucald/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mucald/errors.hpp"

namespace mucald {
namespace {

constexpr std::size_t kWindow = 7;
constexpr double kK1 = 0.01, kK2 = 0.03;
constexpr double kRangeFloor = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_size(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("mask shapes differ: " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
  }
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
          std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = 0.0;
    while (k >= 0) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
          (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

// Exact squared Euclidean distance to the nearest site.
std::vector<double> squared_edt(const PixelSet& sites, std::size_t h, std::size_t w) {
  std::vector<double> grid(h * w, kInf);
  for (auto [y, x] : sites) grid[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 0.0;
  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (std::size_t x = 0; x < w; ++x) {
    f.assign(h, 0.0);
    d.assign(h, 0.0);
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    dt1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    f.assign(grid.begin() + static_cast<std::ptrdiff_t>(y * w),
             grid.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
    d.assign(w, 0.0);
    dt1d(f, d, v, z);
    std::copy(d.begin(), d.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  return grid;
}

// Distances from each side to the nearest pixel of the other, pooled.
std::vector<double> pooled_distances(const PixelSet& a, const PixelSet& b, std::size_t h,
                                     std::size_t w) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  const auto db = squared_edt(b, h, w);
  for (auto [y, x] : a) out.push_back(std::sqrt(db[static_cast<std::size_t>(y) * w + x]));
  const auto da = squared_edt(a, h, w);
  for (auto [y, x] : b) out.push_back(std::sqrt(da[static_cast<std::size_t>(y) * w + x]));
  return out;
}

template <typename Reduce>
DistanceResult surface_distance(const PixelSet& a, const PixelSet& b, std::size_t h,
                                std::size_t w, Reduce reduce) {
  if (a.empty() && b.empty()) return {0.0, true};
  if (a.empty() || b.empty()) {
    return {std::sqrt(static_cast<double>(h * h + w * w)), true};
  }
  return {reduce(pooled_distances(a, b, h, w)), false};
}

template <typename T>
double mean_of(const std::vector<T>& v, double T::*field) {
  double s = 0.0;
  for (const auto& e : v) s += e.*field;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double observed_range(std::span<const double> x) {
  if (x.empty()) return kRangeFloor;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  return std::max(*hi - *lo, kRangeFloor);
}

double ssim_from_stats(double mx, double my, double vx, double vy, double cxy, double c1,
                       double c2) {
  return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

ConfusionScores confusion_scores(const LabelMap& pred, const LabelMap& truth,
                                 std::size_t classes) {
  require_same_size(pred, truth);
  ConfusionScores s;
  s.per_class.resize(classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred.labels[i], t = truth.labels[i];
    if (p >= classes || t >= classes) {
      throw DataError("class id out of range at pixel " + std::to_string(i));
    }
    if (p == t) {
      s.per_class[p].tp++;
    } else {
      s.per_class[p].fp++;
      s.per_class[t].fn++;
    }
  }
  for (auto& c : s.per_class) {
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
                 fn = static_cast<double>(c.fn);
    c.overlap_defined = c.tp + c.fp + c.fn > 0;
    c.precision_defined = c.tp + c.fp > 0;
    c.recall_defined = c.tp + c.fn > 0;
    if (c.overlap_defined) {
      c.iou = tp / (tp + fp + fn);
      c.dice = 2 * tp / (2 * tp + fp + fn);
    }
    if (c.precision_defined) c.precision = tp / (tp + fp);
    if (c.recall_defined) c.recall = tp / (tp + fn);
    if (c.overlap_defined && c.precision + c.recall > 0.0) {
      c.f1 = 2 * c.precision * c.recall / (c.precision + c.recall);
    }
  }
  auto mean_over = [&](std::size_t first, double ClassScores::*field,
                       bool ClassScores::*defined, bool* flag) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = first; k < classes; ++k) {
      if (!(s.per_class[k].*defined)) continue;
      sum += s.per_class[k].*field;
      ++n;
    }
    if (flag) *flag = n == 0;
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
  };
  s.iou_wb = mean_over(0, &ClassScores::iou, &ClassScores::overlap_defined, &s.iou_wb_flagged);
  s.iou_nb = mean_over(1, &ClassScores::iou, &ClassScores::overlap_defined, &s.iou_nb_flagged);
  s.dice = mean_over(1, &ClassScores::dice, &ClassScores::overlap_defined, nullptr);
  s.f1 = mean_over(1, &ClassScores::f1, &ClassScores::overlap_defined, nullptr);
  s.precision = mean_over(1, &ClassScores::precision, &ClassScores::precision_defined, nullptr);
  s.recall = mean_over(1, &ClassScores::recall, &ClassScores::recall_defined, nullptr);
  return s;
}

PixelSet region_boundary(const LabelMap& mask, int cls) {
  PixelSet out;
  const int h = static_cast<int>(mask.height), w = static_cast<int>(mask.width);
  auto in = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask.at(y, x) == cls;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in(y, x)) continue;
      if (!in(y - 1, x) || !in(y + 1, x) || !in(y, x - 1) || !in(y, x + 1)) {
        out.emplace_back(y, x);
      }
    }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

DistanceResult hd95(const PixelSet& a, const PixelSet& b, std::size_t height, std::size_t width) {
  return surface_distance(a, b, height, width,
                          [](std::vector<double> d) { return percentile(std::move(d), 0.95); });
}

DistanceResult assd(const PixelSet& a, const PixelSet& b, std::size_t height, std::size_t width) {
  return surface_distance(a, b, height, width, [](const std::vector<double>& d) {
    double s = 0.0;
    for (double v : d) s += v;
    return s / static_cast<double>(d.size());
  });
}

const std::vector<std::string>& SegMetrics::column_names() {
  static const std::vector<std::string> names = {"Dice",   "IoU_WB", "IoU_NB", "Precision",
                                                 "Recall", "F1",     "HD95",   "ASSD"};
  return names;
}

std::vector<double> SegMetrics::columns() const {
  return {dice, iou_wb, iou_nb, precision, recall, f1, hd95, assd};
}

SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& truth, std::size_t classes) {
  const auto c = confusion_scores(pred, truth, classes);
  SegMetrics m;
  m.dice = c.dice;
  m.iou_wb = c.iou_wb;
  m.iou_nb = c.iou_nb;
  m.precision = c.precision;
  m.recall = c.recall;
  m.f1 = c.f1;
  m.iou_nb_flagged = c.iou_nb_flagged;
  double hsum = 0.0, asum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 1; k < classes; ++k) {
    const auto& s = c.per_class[k];
    if (s.tp + s.fp == 0 && s.tp + s.fn == 0) continue;  // absent from both masks
    const auto pa = region_boundary(pred, static_cast<int>(k));
    const auto pb = region_boundary(truth, static_cast<int>(k));
    const auto h = hd95(pa, pb, pred.height, pred.width);
    const auto a = assd(pa, pb, pred.height, pred.width);
    hsum += h.value;
    asum += a.value;
    m.distance_flagged |= h.flagged;
    ++n;
  }
  if (n == 0) {
    m.distance_flagged = true;
  } else {
    m.hd95 = hsum / static_cast<double>(n);
    m.assd = asum / static_cast<double>(n);
  }
  return m;
}

SegMetrics mean_metrics(const std::vector<SegMetrics>& all) {
  SegMetrics m;
  m.dice = mean_of(all, &SegMetrics::dice);
  m.iou_wb = mean_of(all, &SegMetrics::iou_wb);
  m.iou_nb = mean_of(all, &SegMetrics::iou_nb);
  m.precision = mean_of(all, &SegMetrics::precision);
  m.recall = mean_of(all, &SegMetrics::recall);
  m.f1 = mean_of(all, &SegMetrics::f1);
  m.hd95 = mean_of(all, &SegMetrics::hd95);
  m.assd = mean_of(all, &SegMetrics::assd);
  return m;
}

double mse(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("mse: sizes " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
  }
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

double psnr(std::span<const double> x, std::span<const double> y, double peak) {
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be > 0");
  const double m = mse(x, y);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

double psnr(std::span<const double> x, std::span<const double> y) {
  return psnr(x, y, observed_range(x));
}

double ssim_plane(const double* x, const double* y, std::size_t h, std::size_t w, double range) {
  const double c1 = (kK1 * range) * (kK1 * range), c2 = (kK2 * range) * (kK2 * range);
  const bool global = h < kWindow || w < kWindow;
  const std::size_t wh = global ? h : kWindow, ww = global ? w : kWindow;
  const double n = static_cast<double>(wh * ww);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + wh <= h; ++r)
    for (std::size_t c = 0; c + ww <= w; ++c) {
      double mx = 0.0, my = 0.0;
      for (std::size_t i = r; i < r + wh; ++i)
        for (std::size_t j = c; j < c + ww; ++j) {
          mx += x[i * w + j];
          my += y[i * w + j];
        }
      mx /= n;
      my /= n;
      double vx = 0.0, vy = 0.0, cxy = 0.0;
      for (std::size_t i = r; i < r + wh; ++i)
        for (std::size_t j = c; j < c + ww; ++j) {
          const double dx = x[i * w + j] - mx, dy = y[i * w + j] - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      total += ssim_from_stats(mx, my, vx / n, vy / n, cxy / n, c1, c2);
      ++count;
    }
  return total / static_cast<double>(count);
}

double ssim(const Tensor& x, const Tensor& y, double range) {
  require_same_shape(x, y, "ssim");
  if (x.rank() < 2) throw DimensionError("ssim: rank >= 2 required");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.size() / (h * w);
  double s = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    s += ssim_plane(x.data() + p * h * w, y.data() + p * h * w, h, w, range);
  }
  return s / static_cast<double>(planes);
}

double ssim(const Tensor& x, const Tensor& y) { return ssim(x, y, observed_range(x.values())); }

ReconMetrics recon_metrics(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "recon_metrics");
  return {mse(x.values(), y.values()), psnr(x.values(), y.values()), ssim(x, y)};
}

}  // namespace mucald
