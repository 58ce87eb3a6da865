#include "mucald/synth_tasks.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "mucald/checkpoint.hpp"
#include "mucald/errors.hpp"

namespace mucald {
namespace {

constexpr int kMaxRerolls = 1000;
constexpr double kPi = std::numbers::pi;

struct FamilyInfo {
  Family family;
  std::string_view name;
  std::size_t classes;
};

constexpr std::array<FamilyInfo, kFamilyCount> kFamilies = {{
    {Family::kNestedRings, "nested_rings", 5},
    {Family::kSingleBlob, "single_blob", 2},
    {Family::kTwoObjects, "two_objects", 3},
    {Family::kTexturedRegion, "textured_region", 2},
    {Family::kIrregularBlob, "irregular_blob", 2},
}};

struct Ellipse {
  double cx, cy, a, b, theta;

  bool contains(double x, double y, double scale = 1.0) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / (a * scale), v = (-dx * s + dy * c) / (b * scale);
    return u * u + v * v <= 1.0;
  }
};

struct Canvas {
  std::size_t n;
  Tensor image;
  LabelMap mask;

  explicit Canvas(std::size_t size) : n(size), image({1, size, size}), mask(size, size) {}

  template <typename Fn>
  void each(Fn&& fn) {
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) fn(y, x, x + 0.5, y + 0.5);
  }
  double& pixel(std::size_t y, std::size_t x) { return image.data()[y * n + x]; }
  std::uint8_t& label(std::size_t y, std::size_t x) { return mask.at(y, x); }
};

struct Draw {
  Rng& rng;
  double S;

  double u(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double snap(double v) { return std::floor(v) + 0.5; }
};

void nested_rings(Canvas& c, Draw& d) {
  Ellipse e{d.snap(d.S * d.u(0.42, 0.58)), d.snap(d.S * d.u(0.42, 0.58)), 0, 0, d.u(0, kPi)};
  e.a = d.S * d.u(0.3, 0.42);
  e.b = e.a * d.u(0.8, 1.0);
  constexpr std::array<double, 4> scales = {1.0, 0.75, 0.5, 0.28};
  std::array<double, 5> level;
  for (std::size_t k = 0; k < level.size(); ++k) level[k] = 0.15 + 0.17 * k + d.u(-0.03, 0.03);
  c.each([&](std::size_t y, std::size_t x, double px, double py) {
    std::uint8_t cls = 0;
    for (std::size_t k = 0; k < scales.size(); ++k) {
      if (e.contains(px, py, scales[k])) cls = static_cast<std::uint8_t>(k + 1);
    }
    c.label(y, x) = cls;
    c.pixel(y, x) = level[cls];
  });
}

void single_blob(Canvas& c, Draw& d) {
  Ellipse e{d.S * d.u(0.3, 0.7), d.S * d.u(0.3, 0.7), 0, 0, d.u(0, kPi)};
  e.a = d.S * d.u(0.12, 0.25);
  e.b = e.a * d.u(0.6, 1.0);
  const double bg = 0.4 + d.u(-0.05, 0.05), fg = 0.8 + d.u(-0.05, 0.05);
  const double tilt = d.u(-0.1, 0.1);
  c.each([&](std::size_t y, std::size_t x, double px, double py) {
    const bool in = e.contains(px, py);
    c.label(y, x) = in ? 1 : 0;
    c.pixel(y, x) = (in ? fg : bg) + tilt * (px / d.S - 0.5);
  });
}

void two_objects(Canvas& c, Draw& d) {
  Ellipse head{d.S * d.u(0.38, 0.55), d.S * d.u(0.38, 0.55), 0, 0, d.u(0, kPi)};
  head.a = d.S * d.u(0.2, 0.3);
  head.b = head.a * d.u(0.7, 0.9);
  const double r = d.S * d.u(0.07, 0.11);
  const double phi = d.u(0, 2 * kPi), dist = head.a + r + d.u(0.5, 2.0);
  const double sx = head.cx + dist * std::cos(phi), sy = head.cy + dist * std::sin(phi);
  const double head_level = 0.5 + d.u(-0.05, 0.05), disc_level = 0.9 + d.u(-0.05, 0.05);
  c.each([&](std::size_t y, std::size_t x, double px, double py) {
    std::uint8_t cls = 0;
    double v = 0.05;
    if (head.contains(px, py)) {
      cls = 1;
      v = head.contains(px, py, 0.8) ? head_level : head_level + 0.25;  // bright rim
    }
    if (std::hypot(px - sx, py - sy) <= r) {
      cls = 2;
      v = disc_level;
    }
    c.label(y, x) = cls;
    c.pixel(y, x) = v;
  });
}

void textured_region(Canvas& c, Draw& d) {
  Ellipse e{d.S * d.u(0.35, 0.65), d.S * d.u(0.35, 0.65), 0, 0, d.u(0, kPi)};
  e.a = d.S * d.u(0.2, 0.35);
  e.b = e.a * d.u(0.5, 0.9);
  const double phi = d.u(0, kPi), phase = d.u(0, 2 * kPi);
  const double fin = d.u(0.28, 0.34), fout = d.u(0.06, 0.09);
  c.each([&](std::size_t y, std::size_t x, double px, double py) {
    const bool in = e.contains(px, py);
    const double proj = px * std::cos(phi) + py * std::sin(phi);
    const double f = in ? fin : fout;
    c.label(y, x) = in ? 1 : 0;
    c.pixel(y, x) = (in ? 0.6 : 0.45) + 0.2 * std::sin(2 * kPi * f * proj + phase);
  });
}

void irregular_blob(Canvas& c, Draw& d) {
  const double cx = d.S * d.u(0.35, 0.65), cy = d.S * d.u(0.35, 0.65);
  const double R = d.S * d.u(0.15, 0.25);
  std::array<double, 3> amp, ph;
  for (std::size_t k = 0; k < amp.size(); ++k) {
    amp[k] = d.u(0.0, 0.15);
    ph[k] = d.u(0, 2 * kPi);
  }
  const double bg = 0.65 + d.u(-0.05, 0.05), fg = 0.3 + d.u(-0.05, 0.05);
  c.each([&](std::size_t y, std::size_t x, double px, double py) {
    const double ang = std::atan2(py - cy, px - cx);
    double rad = 1.0;
    for (std::size_t k = 0; k < amp.size(); ++k) rad += amp[k] * std::cos((k + 2) * ang + ph[k]);
    const bool in = std::hypot(px - cx, py - cy) <= R * rad;
    const double vignette = 0.15 * std::hypot(px / d.S - 0.5, py / d.S - 0.5);
    c.label(y, x) = in ? 1 : 0;
    c.pixel(y, x) = (in ? fg : bg) - vignette;
  });
}

}  // namespace

std::size_t family_classes(Family f) { return kFamilies[static_cast<std::size_t>(f)].classes; }

std::string_view family_name(Family f) { return kFamilies[static_cast<std::size_t>(f)].name; }

Family parse_family(std::string_view name) {
  for (const auto& info : kFamilies) {
    if (info.name == name) return info.family;
  }
  throw ConfigError("unknown task family '" + std::string(name) + "'");
}

Family family_for_client(std::size_t client) { return static_cast<Family>(client % kFamilyCount); }

void TaskSpec::validate() const {
  if (image_size < kMinImageSize) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is below the minimum " +
                      std::to_string(kMinImageSize) + " for family " +
                      std::string(family_name(family)));
  }
  if (image_size % 2 != 0) throw ConfigError("image_size must be even");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be >= 0");
}

const std::vector<Sample>& Dataset::split(SplitKind k) const {
  switch (k) {
    case SplitKind::kTrain:
      return train;
    case SplitKind::kVal:
      return val;
    case SplitKind::kTest:
      return test;
  }
  throw ConfigError("bad split");
}

double foreground_fraction(const LabelMap& mask) {
  if (mask.size() == 0) return 0.0;
  std::size_t fg = 0;
  for (auto v : mask.labels) fg += v != 0;
  return static_cast<double>(fg) / static_cast<double>(mask.size());
}

Sample generate_sample(const TaskSpec& spec, SplitKind split, std::size_t index) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(spec.family), static_cast<std::uint32_t>(split),
                    static_cast<std::uint32_t>(index)};
  Rng rng(seq);
  Draw d{rng, static_cast<double>(spec.image_size)};
  for (int attempt = 0; attempt < kMaxRerolls; ++attempt) {
    Canvas c(spec.image_size);
    switch (spec.family) {
      case Family::kNestedRings:
        nested_rings(c, d);
        break;
      case Family::kSingleBlob:
        single_blob(c, d);
        break;
      case Family::kTwoObjects:
        two_objects(c, d);
        break;
      case Family::kTexturedRegion:
        textured_region(c, d);
        break;
      case Family::kIrregularBlob:
        irregular_blob(c, d);
        break;
    }
    const double fg = foreground_fraction(c.mask);
    if (fg < kMinForeground || fg > kMaxForeground) continue;
    if (spec.noise > 0.0) {
      std::normal_distribution<double> n(0.0, spec.noise);
      for (auto& v : c.image.values()) v += n(rng);
    }
    Sample s;
    s.image = std::move(c.image);
    s.mask = std::move(c.mask);
    s.id = (static_cast<std::uint64_t>(split) << 32) | index;
    return s;
  }
  throw DataError("could not draw a " + std::string(family_name(spec.family)) +
                  " sample with foreground fraction in range");
}

Dataset generate(const TaskSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  auto fill = [&](std::vector<Sample>& out, SplitKind k, std::size_t n) {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(spec, k, i));
  };
  fill(ds.train, SplitKind::kTrain, spec.train);
  fill(ds.val, SplitKind::kVal, spec.val);
  fill(ds.test, SplitKind::kTest, spec.test);
  return ds;
}

std::pair<Tensor, LabelMap> augment(const Tensor& image, const LabelMap& mask, Rng& rng) {
  static constexpr std::array<Transform, 6> kChoices = {
      Transform::kIdentity, Transform::kFlipH,  Transform::kFlipV,
      Transform::kRot90,    Transform::kRot180, Transform::kRot270};
  const auto t = kChoices[std::uniform_int_distribution<std::size_t>(0, kChoices.size() - 1)(rng)];
  return {apply_transform(image, t), apply_transform(mask, t)};
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  const std::size_t S = ds.spec.image_size;
  nlohmann::json manifest = {{"family", family_name(ds.spec.family)},
                             {"classes", ds.classes()},
                             {"image_size", S},
                             {"noise", ds.spec.noise},
                             {"seed", ds.spec.seed}};
  const std::array<std::pair<SplitKind, const char*>, 3> splits = {
      {{SplitKind::kTrain, "train"}, {SplitKind::kVal, "val"}, {SplitKind::kTest, "test"}}};
  for (auto [kind, name] : splits) {
    const auto& samples = ds.split(kind);
    Tensor images({samples.size(), 1, S, S}), masks({samples.size(), S, S});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::copy(samples[i].image.values().begin(), samples[i].image.values().end(),
                images.data() + i * S * S);
      for (std::size_t p = 0; p < S * S; ++p) masks.data()[i * S * S + p] = samples[i].mask.labels[p];
    }
    const std::string stem = name;
    write_checkpoint(dir / (stem + "_images.mcsf"), {&images});
    write_checkpoint(dir / (stem + "_masks.mcsf"), {&masks});
    manifest["splits"][stem] = {{"count", samples.size()},
                                {"images", stem + "_images.mcsf"},
                                {"masks", stem + "_masks.mcsf"}};
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace mucald
