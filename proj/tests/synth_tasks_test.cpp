#include "mucald/synth_tasks.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "mucald/checkpoint.hpp"
#include "mucald/errors.hpp"
#include "mucald/proxy_features.hpp"

using namespace mucald;

namespace {

constexpr std::array<Family, kFamilyCount> kAll = {Family::kNestedRings, Family::kSingleBlob,
                                                   Family::kTwoObjects, Family::kTexturedRegion,
                                                   Family::kIrregularBlob};

TaskSpec small_spec(Family f, std::uint64_t seed = 3) {
  TaskSpec s;
  s.family = f;
  s.train = 20;
  s.val = 5;
  s.test = 5;
  s.seed = seed;
  return s;
}

std::vector<std::size_t> histogram(const LabelMap& m, std::size_t classes) {
  std::vector<std::size_t> h(classes, 0);
  for (auto v : m.labels) h.at(v)++;
  return h;
}

// Summary statistics of a raw image for the family classifier.
std::vector<double> image_stats(const Tensor& img) {
  const std::size_t S = img.dim(1);
  double mean = 0, sq = 0, grad = 0, lap = 0;
  const auto v = img.values();
  for (double x : v) mean += x / double(v.size());
  for (double x : v) sq += (x - mean) * (x - mean) / double(v.size());
  std::vector<double> hist(8, 0.0);
  for (double x : v) {
    const int b = std::clamp(int(std::floor(x * 8)), 0, 7);
    hist[b] += 1.0 / double(v.size());
  }
  for (std::size_t y = 1; y + 1 < S; ++y)
    for (std::size_t x = 1; x + 1 < S; ++x) {
      const double c = v[y * S + x];
      grad += std::abs(v[y * S + x + 1] - c) + std::abs(v[(y + 1) * S + x] - c);
      lap += std::abs(4 * c - v[y * S + x + 1] - v[y * S + x - 1] - v[(y + 1) * S + x] -
                      v[(y - 1) * S + x]);
    }
  std::vector<double> f = {mean, std::sqrt(sq), grad / double(S * S), lap / double(S * S)};
  f.insert(f.end(), hist.begin(), hist.end());
  return f;
}

}  // namespace

TEST(SynthTasks, ClassCountsAndNames) {
  EXPECT_EQ(family_classes(Family::kNestedRings), 5u);
  EXPECT_EQ(family_classes(Family::kSingleBlob), 2u);
  EXPECT_EQ(family_classes(Family::kTwoObjects), 3u);
  EXPECT_EQ(family_classes(Family::kTexturedRegion), 2u);
  EXPECT_EQ(family_classes(Family::kIrregularBlob), 2u);
  for (auto f : kAll) EXPECT_EQ(parse_family(family_name(f)), f);
  EXPECT_THROW(parse_family("mri"), ConfigError);
  EXPECT_EQ(family_for_client(6), Family::kSingleBlob);
}

TEST(SynthTasks, DefaultSplitSizes) {
  TaskSpec s;
  EXPECT_EQ(s.train, 200u);
  EXPECT_EQ(s.val, 36u);
  EXPECT_EQ(s.test, 40u);
  EXPECT_EQ(s.image_size, 32u);
}

TEST(SynthTasks, TooSmallImageRejected) {
  auto s = small_spec(Family::kNestedRings);
  s.image_size = 8;
  EXPECT_THROW(generate(s), ConfigError);
  s.image_size = 17;
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(SynthTasks, NestedRingsAreConcentric) {
  for (std::size_t size : {16u, 32u}) {
    auto spec = small_spec(Family::kNestedRings);
    spec.image_size = size;
    for (const auto& s : generate(spec).train) {
      const auto h = histogram(s.mask, 5);
      for (std::size_t c = 0; c < 5; ++c) ASSERT_GT(h[c], 0u) << "class " << c;
      // Any pixel of class c+1 has all 4-neighbours of class >= c.
      const int n = int(size);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const int c = s.mask.at(y, x);
          if (c < 2) continue;
          for (auto [dy, dx] : {std::pair{0, 1}, {1, 0}, {0, -1}, {-1, 0}}) {
            const int yy = y + dy, xx = x + dx;
            ASSERT_TRUE(yy >= 0 && yy < n && xx >= 0 && xx < n);
            ASSERT_GE(s.mask.at(yy, xx), c - 1);
          }
        }
    }
  }
}

TEST(SynthTasks, MasksHaveBackgroundAndBoundedForeground) {
  for (auto f : kAll) {
    const auto ds = generate(small_spec(f));
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
      for (const auto& s : *split) {
        const auto h = histogram(s.mask, family_classes(f));
        EXPECT_GT(h[0], 0u);
        const double fg = foreground_fraction(s.mask);
        EXPECT_GE(fg, kMinForeground);
        EXPECT_LE(fg, kMaxForeground);
        for (double v : s.image.values()) ASSERT_TRUE(std::isfinite(v));
      }
    }
  }
}

TEST(SynthTasks, NoiselessImagesArePiecewiseConstantPerRegion) {
  // Families whose regions have flat fills.
  for (auto f : {Family::kNestedRings, Family::kTwoObjects}) {
    auto spec = small_spec(f);
    spec.noise = 0.0;
    for (const auto& s : generate(spec).train) {
      std::map<int, std::set<double>> levels;
      for (std::size_t i = 0; i < s.mask.size(); ++i) levels[s.mask.labels[i]].insert(s.image.data()[i]);
      for (const auto& [cls, vals] : levels) {
        EXPECT_LE(vals.size(), f == Family::kTwoObjects && cls == 1 ? 2u : 1u);
      }
    }
  }
}

TEST(SynthTasks, DeterministicPerSeed) {
  for (auto f : kAll) {
    const auto a = generate(small_spec(f, 9)), b = generate(small_spec(f, 9));
    const auto c = generate(small_spec(f, 10));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      ASSERT_EQ(a.train[i].image.storage(), b.train[i].image.storage());
      ASSERT_EQ(a.train[i].mask, b.train[i].mask);
      any_diff |= a.train[i].image.storage() != c.train[i].image.storage();
    }
    EXPECT_TRUE(any_diff);
  }
}

TEST(SynthTasks, SplitsAreDisjointAndSizeIndependent) {
  auto spec = small_spec(Family::kSingleBlob);
  const auto ds = generate(spec);
  std::set<std::vector<double>> train;
  for (const auto& s : ds.train) train.insert(s.image.storage());
  for (const auto& s : ds.test) EXPECT_FALSE(train.count(s.image.storage()));
  spec.train = 40;
  const auto bigger = generate(spec);
  EXPECT_EQ(bigger.test[0].image.storage(), ds.test[0].image.storage());
  std::set<std::uint64_t> ids;
  for (const auto* split : {&ds.train, &ds.val, &ds.test})
    for (const auto& s : *split) EXPECT_TRUE(ids.insert(s.id).second);
}

TEST(SynthTasks, AugmentDoubleFlipAndCounts) {
  const auto s = generate_sample(small_spec(Family::kTwoObjects), SplitKind::kTrain, 0);
  const auto once = apply_transform(s.image, Transform::kFlipH);
  EXPECT_EQ(apply_transform(once, Transform::kFlipH).storage(), s.image.storage());
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto [img, mask] = augment(s.image, s.mask, rng);
    EXPECT_EQ(histogram(mask, 3), histogram(s.mask, 3));
    // Image and mask moved by the same transform.
    bool matched = false;
    for (auto t : {Transform::kIdentity, Transform::kFlipH, Transform::kFlipV, Transform::kRot90,
                   Transform::kRot180, Transform::kRot270}) {
      matched |= apply_transform(s.image, t).storage() == img.storage() &&
                 apply_transform(s.mask, t) == mask;
    }
    EXPECT_TRUE(matched);
  }
  Rng r1(77), r2(77);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(augment(s.image, s.mask, r1).second, augment(s.image, s.mask, r2).second);
  }
}

TEST(SynthTasks, ProxyFeaturesNonDegeneratePerFamily) {
  const ProxySpec spec(default_proxy_features());
  for (auto f : kAll) {
    auto t = small_spec(f);
    t.train = 100;
    const auto ds = generate(t);
    std::vector<double> sum(spec.size(), 0.0), sq(spec.size(), 0.0);
    for (const auto& s : ds.train) {
      const auto v = extract(s.image, s.mask, kAnyForeground, spec);
      ASSERT_FALSE(v.empty_region);
      for (std::size_t j = 0; j < spec.size(); ++j) {
        ASSERT_TRUE(std::isfinite(v.values[j]));
        sum[j] += v.values[j];
        sq[j] += v.values[j] * v.values[j];
      }
    }
    for (std::size_t j = 0; j < spec.size(); ++j) {
      const double var = sq[j] / 100.0 - std::pow(sum[j] / 100.0, 2);
      EXPECT_GT(var, 1e-12) << family_name(f) << " " << spec.names()[j];
    }
  }
}

TEST(SynthTasks, FamiliesAreDiscriminable) {
  // Softmax regression on image statistics, trained on one seed, scored on
  // samples of another.
  std::vector<std::vector<double>> xtr, xte;
  std::vector<std::size_t> ytr, yte;
  for (std::size_t k = 0; k < kFamilyCount; ++k) {
    auto t = small_spec(kAll[k], 1);
    t.train = 60;
    t.test = 30;
    const auto ds = generate(t);
    for (const auto& s : ds.train) xtr.push_back(image_stats(s.image)), ytr.push_back(k);
    for (const auto& s : ds.test) xte.push_back(image_stats(s.image)), yte.push_back(k);
  }
  const std::size_t d = xtr[0].size(), K = kFamilyCount;
  std::vector<double> mu(d, 0), sd(d, 0);
  for (const auto& x : xtr)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[j] / double(xtr.size());
  for (const auto& x : xtr)
    for (std::size_t j = 0; j < d; ++j) sd[j] += std::pow(x[j] - mu[j], 2) / double(xtr.size());
  for (auto& s : sd) s = std::sqrt(s) + 1e-9;
  auto z = [&](std::vector<double> x) {
    for (std::size_t j = 0; j < d; ++j) x[j] = (x[j] - mu[j]) / sd[j];
    x.push_back(1.0);
    return x;
  };
  std::vector<std::vector<double>> W(K, std::vector<double>(d + 1, 0.0));
  auto logits = [&](const std::vector<double>& x) {
    std::vector<double> l(K, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j <= d; ++j) l[k] += W[k][j] * x[j];
    return l;
  };
  for (int epoch = 0; epoch < 300; ++epoch) {
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      const auto x = z(xtr[i]);
      auto l = logits(x);
      const double m = *std::max_element(l.begin(), l.end());
      double tot = 0;
      for (auto& v : l) tot += (v = std::exp(v - m));
      for (std::size_t k = 0; k < K; ++k) {
        const double g = l[k] / tot - (k == ytr[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j <= d; ++j) W[k][j] -= 0.05 * g * x[j];
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xte.size(); ++i) {
    const auto l = logits(z(xte[i]));
    correct += std::size_t(std::max_element(l.begin(), l.end()) - l.begin()) == yte[i];
  }
  EXPECT_GT(double(correct) / double(xte.size()), 0.9);
}

TEST(SynthTasks, DatasetDumpRoundTrips) {
  const auto dir = std::filesystem::temp_directory_path() / "mucald_synth_dump";
  std::filesystem::remove_all(dir);
  const auto ds = generate(small_spec(Family::kIrregularBlob));
  write_dataset(dir, ds);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const auto imgs = read_checkpoint(dir / "val_images.mcsf");
  const auto masks = read_checkpoint(dir / "val_masks.mcsf");
  ASSERT_EQ(imgs.size(), 1u);
  EXPECT_EQ(imgs[0].dim(0), ds.val.size());
  EXPECT_EQ(imgs[0].data()[5], ds.val[0].image.data()[5]);
  EXPECT_EQ(masks[0].data()[40], ds.val[0].mask.labels[40]);
  std::filesystem::remove_all(dir);
}
