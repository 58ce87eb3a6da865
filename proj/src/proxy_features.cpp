#include "mucald/proxy_features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <istream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "mucald/errors.hpp"

namespace mucald {
namespace {

constexpr std::array<std::string_view, 13> kNames = {
    "area",        "perimeter",  "circularity", "compactness",    "solidity",
    "bbox_width",  "bbox_height", "orientation", "asymmetry",     "mean_intensity",
    "std_intensity", "entropy",  "brightness",
};

std::int64_t cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::string_view feature_name(ProxyFeature f) { return kNames[static_cast<std::size_t>(f)]; }

ProxyFeature parse_feature(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<ProxyFeature>(i);
  }
  throw ConfigError("proxy feature '" + std::string(name) + "' is not supported");
}

const std::vector<std::string>& default_proxy_features() {
  static const std::vector<std::string> names = {
      "area",        "perimeter",      "circularity",    "bbox_width",
      "asymmetry",   "mean_intensity", "std_intensity",  "entropy"};
  return names;
}

const std::vector<std::string>& supported_features() {
  static const std::vector<std::string> names(kNames.begin(), kNames.end());
  return names;
}

ProxySpec::ProxySpec(const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("proxy spec: feature list is empty");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ConfigError("proxy spec: duplicate feature '" + n + "'");
    features_.push_back(parse_feature(n));
  }
}

std::vector<std::string> ProxySpec::names() const {
  std::vector<std::string> out;
  for (auto f : features_) out.emplace_back(feature_name(f));
  return out;
}

std::int64_t lattice_points_in_hull(const std::vector<Point>& hull) {
  if (hull.empty()) return 0;
  std::int64_t boundary = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point& a = hull[i];
    const Point& b = hull[(i + 1) % hull.size()];
    boundary += std::gcd(std::abs(b.x - a.x), std::abs(b.y - a.y));
  }
  if (hull.size() <= 2) return boundary / 2 + 1;
  // Pick's theorem: interior + boundary = A + B/2 + 1.
  std::int64_t twice_area = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point& a = hull[i];
    const Point& b = hull[(i + 1) % hull.size()];
    twice_area += a.x * b.y - b.x * a.y;
  }
  return (std::abs(twice_area) + boundary) / 2 + 1;
}

std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double polygon_area(const std::vector<Point>& poly) {
  if (poly.size() < 3) return 0.0;
  std::int64_t twice = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(static_cast<double>(twice)) / 2.0;
}

double shannon_entropy(const std::vector<double>& values, std::size_t bins) {
  if (values.empty()) throw DataError("shannon_entropy: empty input");
  if (bins == 0) throw ConfigError("shannon_entropy: bins must be positive");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mn == mx) return 0.0;
  std::vector<std::size_t> hist(bins, 0);
  const double width = (mx - mn) / static_cast<double>(bins);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - mn) / width);
    hist[std::min(b, bins - 1)]++;
  }
  double h = 0.0;
  const double n = static_cast<double>(values.size());
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

ProxyVector extract(const Tensor& image, const LabelMap& mask, int target_class,
                    const ProxySpec& spec) {
  if (image.rank() != 3 || image.dim(1) != mask.height || image.dim(2) != mask.width) {
    throw DimensionError("extract: image " + shape_str(image.shape()) +
                         " does not match mask [" + std::to_string(mask.height) + "," +
                         std::to_string(mask.width) + "]");
  }
  const std::size_t h = mask.height, w = mask.width, ch = image.dim(0);
  auto inside = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
        x >= static_cast<std::ptrdiff_t>(w)) {
      return false;
    }
    const int label = mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    return target_class == kAnyForeground ? label != 0 : label == target_class;
  };

  double area = 0.0, perimeter = 0.0;
  double sx = 0.0, sy = 0.0;
  std::size_t xmin = w, xmax = 0, ymin = h, ymax = 0;
  std::vector<double> intensity;
  double first_channel = 0.0;
  std::vector<Point> centres;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto iy = static_cast<std::ptrdiff_t>(y), ix = static_cast<std::ptrdiff_t>(x);
      if (!inside(iy, ix)) continue;
      area += 1.0;
      perimeter += !inside(iy - 1, ix) + !inside(iy + 1, ix) + !inside(iy, ix - 1) +
                   !inside(iy, ix + 1);
      sx += static_cast<double>(x);
      sy += static_cast<double>(y);
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
      double mean_c = 0.0;
      for (std::size_t c = 0; c < ch; ++c) mean_c += image[(c * h + y) * w + x];
      intensity.push_back(mean_c / static_cast<double>(ch));
      first_channel += image[y * w + x];
      centres.push_back({static_cast<std::int64_t>(x), static_cast<std::int64_t>(y)});
    }
  }

  ProxyVector out;
  out.values.assign(spec.size(), 0.0);
  if (area == 0.0) {
    out.empty_region = true;
    return out;
  }

  const double cx = sx / area, cy = sy / area;
  double mu20 = 0.0, mu02 = 0.0, mu11 = 0.0;
  for (std::size_t y = ymin; y <= ymax; ++y) {
    for (std::size_t x = xmin; x <= xmax; ++x) {
      if (!inside(static_cast<std::ptrdiff_t>(y), static_cast<std::ptrdiff_t>(x))) continue;
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      mu20 += dx * dx;
      mu02 += dy * dy;
      mu11 += dx * dy;
    }
  }
  mu20 /= area;
  mu02 /= area;
  mu11 /= area;

  double mean_i = 0.0;
  for (double v : intensity) mean_i += v;
  mean_i /= area;
  double var_i = 0.0;
  for (double v : intensity) var_i += (v - mean_i) * (v - mean_i);
  var_i /= area;

  for (std::size_t i = 0; i < spec.size(); ++i) {
    double v = 0.0;
    switch (spec.features()[i]) {
      case ProxyFeature::kArea: v = area; break;
      case ProxyFeature::kPerimeter: v = perimeter; break;
      case ProxyFeature::kCircularity:
        v = 4.0 * std::numbers::pi * area / (perimeter * perimeter);
        break;
      case ProxyFeature::kCompactness:
        v = perimeter * perimeter / (4.0 * std::numbers::pi * area);
        break;
      case ProxyFeature::kSolidity: {
        v = area / static_cast<double>(lattice_points_in_hull(convex_hull(centres)));
        break;
      }
      case ProxyFeature::kBboxWidth: v = static_cast<double>(xmax - xmin + 1); break;
      case ProxyFeature::kBboxHeight: v = static_cast<double>(ymax - ymin + 1); break;
      case ProxyFeature::kOrientation: v = 0.5 * std::atan2(2.0 * mu11, mu20 - mu02); break;
      case ProxyFeature::kAsymmetry: {
        const double tr = mu20 + mu02;
        const double disc = std::sqrt(std::max(0.0, (mu20 - mu02) * (mu20 - mu02) / 4.0 +
                                                        mu11 * mu11));
        const double major = tr / 2.0 + disc, minor = tr / 2.0 - disc;
        v = major > 0.0 ? 1.0 - std::max(0.0, minor) / major : 0.0;
        break;
      }
      case ProxyFeature::kMeanIntensity: v = mean_i; break;
      case ProxyFeature::kStdIntensity: v = std::sqrt(var_i); break;
      case ProxyFeature::kEntropy: v = shannon_entropy(intensity, 32); break;
      case ProxyFeature::kBrightness: v = first_channel / area; break;
    }
    out.values[i] = v;
  }
  return out;
}

std::pair<std::vector<ProxyVector>, NormalizationStats> normalize_dataset(
    const std::vector<ProxyVector>& vectors) {
  if (vectors.size() < 2) throw DataError("normalize_dataset: at least 2 vectors required");
  const std::size_t d = vectors.front().values.size();
  NormalizationStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& v : vectors) {
    if (v.values.size() != d) throw DimensionError("normalize_dataset: ragged vectors");
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] += v.values[j];
  }
  const double n = static_cast<double>(vectors.size());
  for (auto& m : stats.mean) m /= n;
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < d; ++j)
      stats.std[j] += (v.values[j] - stats.mean[j]) * (v.values[j] - stats.mean[j]);
  for (auto& s : stats.std) {
    s = std::sqrt(s / n);
    if (!(s > 1e-12)) s = 1.0;
  }
  std::vector<ProxyVector> out;
  out.reserve(vectors.size());
  for (const auto& v : vectors) out.push_back(normalize(v, stats));
  return {std::move(out), std::move(stats)};
}

ProxyVector normalize(const ProxyVector& v, const NormalizationStats& stats) {
  ProxyVector out = v;
  for (std::size_t j = 0; j < v.values.size(); ++j) {
    out.values[j] = (v.values[j] - stats.mean[j]) / stats.std[j];
  }
  return out;
}

ProxyVector denormalize(const ProxyVector& v, const NormalizationStats& stats) {
  ProxyVector out = v;
  for (std::size_t j = 0; j < v.values.size(); ++j) {
    out.values[j] = v.values[j] * stats.std[j] + stats.mean[j];
  }
  return out;
}

void write_feature_csv(std::ostream& out, const std::vector<std::string>& names,
                       const std::vector<ProxyVector>& rows) {
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << "\n";
  out.precision(17);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.values.size(); ++j) out << (j ? "," : "") << r.values[j];
    out << "\n";
  }
}

FeatureTable read_feature_csv(std::istream& in) {
  FeatureTable table;
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (table.names.empty()) {
      if (cells.size() < 2) {
        throw DataError("line " + std::to_string(line_no) + ": at least 2 columns required");
      }
      table.names = cells;
      continue;
    }
    if (cells.size() != table.names.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(table.names.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(c, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != c.size() || !std::isfinite(v)) {
        throw DataError("line " + std::to_string(line_no) + ": non-numeric cell '" + c + "'");
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  if (table.names.empty()) throw DataError("line 0: empty CSV");
  return table;
}

}  // namespace mucald
