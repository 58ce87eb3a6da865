#pragma once

#include <cstdint>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

// Dense per-pixel class labels, row-major; class 0 is background.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }
  bool operator==(const LabelMap&) const = default;
};

// Square-image geometric transforms shared by augmentation and tests.
// Image tensors are [channels, H, W].
enum class Transform { kIdentity, kFlipH, kFlipV, kRot90, kRot180, kRot270 };

Tensor apply_transform(const Tensor& image, Transform t);
LabelMap apply_transform(const LabelMap& mask, Transform t);

}  // namespace mucald
