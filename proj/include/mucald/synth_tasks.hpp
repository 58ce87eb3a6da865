#pragma once
// Seeded synthetic segmentation tasks, one family per client.
//
// Images are [1, S, S] with intensities roughly in [0, 1]; masks are the
// exact rasterization of the drawn shapes and carry no noise.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mucald/image.hpp"
#include "mucald/nn.hpp"
#include "mucald/tensor.hpp"

namespace mucald {

enum class Family {
  kNestedRings,     // 5 classes, concentric ellipses
  kSingleBlob,      // 2 classes, one ellipse
  kTwoObjects,      // 3 classes, large ellipse plus a small disc
  kTexturedRegion,  // 2 classes, texture-defined region
  kIrregularBlob,   // 2 classes, star-shaped lobed outline
};

inline constexpr std::size_t kFamilyCount = 5;

std::size_t family_classes(Family f);
std::string_view family_name(Family f);
// Throws ConfigError for unknown names.
Family parse_family(std::string_view name);
// Family of client k when clients cycle through the families in declared order.
Family family_for_client(std::size_t client);

struct TaskSpec {
  Family family = Family::kSingleBlob;
  std::size_t image_size = 32;
  std::size_t train = 200;
  std::size_t val = 36;
  std::size_t test = 40;
  double noise = 0.05;  // std of additive Gaussian pixel noise
  std::uint64_t seed = 0;

  // Throws ConfigError; image_size must be >= kMinImageSize and even.
  void validate() const;
};

inline constexpr std::size_t kMinImageSize = 16;

enum class SplitKind : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

struct Sample {
  Tensor image;  // [1, S, S]
  LabelMap mask;
  std::uint64_t id = 0;  // unique within a dataset: split << 32 | index
};

struct Dataset {
  TaskSpec spec;
  std::vector<Sample> train, val, test;

  std::size_t classes() const { return family_classes(spec.family); }
  const std::vector<Sample>& split(SplitKind k) const;
};

// Each sample is drawn from its own generator seeded by (seed, split, index),
// so splits are disjoint by construction and samples do not depend on the
// split sizes.
Sample generate_sample(const TaskSpec& spec, SplitKind split, std::size_t index);
Dataset generate(const TaskSpec& spec);

inline constexpr double kMinForeground = 0.05;
inline constexpr double kMaxForeground = 0.6;
double foreground_fraction(const LabelMap& mask);

// Applies one uniformly chosen transform of the dihedral subset
// {identity, flips, rotations} to both image and mask.
std::pair<Tensor, LabelMap> augment(const Tensor& image, const LabelMap& mask, Rng& rng);

// <split>_images.mcsf ([N, 1, S, S]) and <split>_masks.mcsf ([N, S, S]) in
// the checkpoint format, plus manifest.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);

}  // namespace mucald
