#pragma once
// Segmentation overlap and surface-distance scores, and reconstruction
// quality (MSE, PSNR, SSIM). Class 0 is background everywhere.

#include <cstdint>
#include <string>
#include <vector>

#include "mucald/image.hpp"
#include "mucald/tensor.hpp"

namespace mucald {

struct ClassScores {
  std::size_t tp = 0, fp = 0, fn = 0;
  double dice = 0.0, iou = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  bool overlap_defined = false;    // tp + fp + fn > 0 (dice, iou, f1)
  bool precision_defined = false;  // tp + fp > 0
  bool recall_defined = false;     // tp + fn > 0
};

struct ConfusionScores {
  std::vector<ClassScores> per_class;
  // Means over classes whose ratio is defined; a mean with no defined class is
  // 0 and flagged.
  double iou_wb = 0.0;  // all classes
  double iou_nb = 0.0;  // classes 1..C-1
  double dice = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;  // classes 1..C-1
  bool iou_wb_flagged = false;
  bool iou_nb_flagged = false;
};

ConfusionScores confusion_scores(const LabelMap& pred, const LabelMap& truth,
                                 std::size_t classes);

using PixelSet = std::vector<std::pair<int, int>>;  // (y, x)

// Pixels of the region with a 4-neighbour outside it (image border counts).
PixelSet region_boundary(const LabelMap& mask, int cls);

struct DistanceResult {
  double value = 0.0;
  bool flagged = false;  // empty side(s): sentinel or degenerate 0
};

// Pooled directed nearest-neighbour distances in both directions; hd95 is
// their 95th percentile (linear interpolation), assd their mean. One side
// empty gives the image diagonal, flagged; both empty gives 0, flagged.
DistanceResult hd95(const PixelSet& a, const PixelSet& b, std::size_t height, std::size_t width);
DistanceResult assd(const PixelSet& a, const PixelSet& b, std::size_t height, std::size_t width);

// Linear interpolation between order statistics at q in [0, 1].
double percentile(std::vector<double> values, double q);

struct SegMetrics {
  double dice = 0.0, iou_wb = 0.0, iou_nb = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  double hd95 = 0.0, assd = 0.0;
  bool iou_nb_flagged = false;
  bool distance_flagged = false;

  static const std::vector<std::string>& column_names();
  std::vector<double> columns() const;
};

// Distances averaged over foreground classes present in either mask.
SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& truth, std::size_t classes);
// Arithmetic mean of per-sample metrics.
SegMetrics mean_metrics(const std::vector<SegMetrics>& all);

inline constexpr double kPsnrCap = 100.0;

double mse(std::span<const double> x, std::span<const double> y);
// 10 log10(peak^2 / mse), capped at kPsnrCap.
double psnr(std::span<const double> x, std::span<const double> y, double peak);
// Peak = observed range of x, floored at 1e-6.
double psnr(std::span<const double> x, std::span<const double> y);

// Windowed SSIM over one 2-D plane (row-major h x w), 7x7 uniform window,
// population statistics, mean over valid window positions; planes smaller
// than the window use one global window.
double ssim_plane(const double* x, const double* y, std::size_t h, std::size_t w, double range);

// Tensors of rank >= 2 are treated as stacks of 2-D planes; SSIM is averaged
// over planes. The dynamic range is the observed range of x unless given.
double ssim(const Tensor& x, const Tensor& y);
double ssim(const Tensor& x, const Tensor& y, double range);

struct ReconMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};
ReconMetrics recon_metrics(const Tensor& x, const Tensor& y);

}  // namespace mucald
