#pragma once
// Morphological and intensity descriptors of a labelled region, used as weak
// supervision targets for the causal latents.
//
// Definitions (pixel units, 4-connectivity):
//   area          pixel count of the region
//   perimeter     number of pixel edges between the region and anything else
//                 (image border counts as "else")
//   circularity   4*pi*area / perimeter^2
//   compactness   perimeter^2 / (4*pi*area)
//   solidity      area / number of pixel centres inside the convex hull of the
//                 region's pixel centres (1 for digitally convex regions)
//   bbox_width/height   extents of the axis-aligned bounding box
//   orientation   0.5 * atan2(2*mu11, mu20 - mu02) over pixel centres
//   asymmetry     1 - (minor / major) eigenvalue ratio of the second moments
//   mean/std_intensity  over region pixels, channel-averaged
//   entropy       Shannon entropy (bits, 32 bins) of channel-averaged intensity
//   brightness    mean of the first channel inside the region

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "mucald/image.hpp"
#include "mucald/tensor.hpp"

namespace mucald {

enum class ProxyFeature {
  kArea,
  kPerimeter,
  kCircularity,
  kCompactness,
  kSolidity,
  kBboxWidth,
  kBboxHeight,
  kOrientation,
  kAsymmetry,
  kMeanIntensity,
  kStdIntensity,
  kEntropy,
  kBrightness,
};

std::string_view feature_name(ProxyFeature f);
// Throws ConfigError for names outside the supported set.
ProxyFeature parse_feature(std::string_view name);
const std::vector<std::string>& supported_features();
// Eight features used as proxy targets when a run does not name its own.
const std::vector<std::string>& default_proxy_features();

class ProxySpec {
 public:
  explicit ProxySpec(const std::vector<std::string>& names);
  const std::vector<ProxyFeature>& features() const { return features_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return features_.size(); }

 private:
  std::vector<ProxyFeature> features_;
};

struct ProxyVector {
  std::vector<double> values;
  bool empty_region = false;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;  // 1.0 sentinel for zero-variance features
};

// Region selector: a class id, or kAnyForeground for every non-zero label.
inline constexpr int kAnyForeground = -1;

ProxyVector extract(const Tensor& image, const LabelMap& mask, int target_class,
                    const ProxySpec& spec);

struct Point {
  std::int64_t x;
  std::int64_t y;
  bool operator==(const Point&) const = default;
};

// Andrew's monotone chain. Counter-clockwise, no collinear vertices; inputs of
// one or two distinct points are returned as-is (deduplicated).
std::vector<Point> convex_hull(std::vector<Point> points);
double polygon_area(const std::vector<Point>& polygon);
// Integer points inside or on a hull returned by convex_hull.
std::int64_t lattice_points_in_hull(const std::vector<Point>& hull);

// Histogram over [min, max] with `bins` equal bins; a single bin when
// min == max. Returns -sum p log2 p over non-empty bins.
double shannon_entropy(const std::vector<double>& values, std::size_t bins = 32);

// Z-scores each feature. Zero-variance features map to 0 with std = 1.
std::pair<std::vector<ProxyVector>, NormalizationStats> normalize_dataset(
    const std::vector<ProxyVector>& vectors);
ProxyVector normalize(const ProxyVector& v, const NormalizationStats& stats);
ProxyVector denormalize(const ProxyVector& v, const NormalizationStats& stats);

// CSV with a header of feature names and one row per sample.
void write_feature_csv(std::ostream& out, const std::vector<std::string>& names,
                       const std::vector<ProxyVector>& rows);

struct FeatureTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
};
// Throws DataError with the 1-based line number on malformed input.
FeatureTable read_feature_csv(std::istream& in);

}  // namespace mucald
