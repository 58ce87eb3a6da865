#include "mucald/image.hpp"

#include "mucald/errors.hpp"

namespace mucald {
namespace {

// Source coordinate for destination (y, x) in an n x n grid.
std::pair<std::size_t, std::size_t> source_of(std::size_t y, std::size_t x, std::size_t n,
                                              Transform t) {
  switch (t) {
    case Transform::kIdentity: return {y, x};
    case Transform::kFlipH: return {y, n - 1 - x};
    case Transform::kFlipV: return {n - 1 - y, x};
    case Transform::kRot90: return {x, n - 1 - y};  // counter-clockwise
    case Transform::kRot180: return {n - 1 - y, n - 1 - x};
    case Transform::kRot270: return {n - 1 - x, y};
  }
  return {y, x};
}

}  // namespace

Tensor apply_transform(const Tensor& image, Transform t) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("apply_transform: square [C,H,W] image required, got " +
                         shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), n = image.dim(1);
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        auto [sy, sx] = source_of(y, x, n, t);
        out[(ch * n + y) * n + x] = image[(ch * n + sy) * n + sx];
      }
  return out;
}

LabelMap apply_transform(const LabelMap& mask, Transform t) {
  if (mask.height != mask.width) throw DimensionError("apply_transform: square mask required");
  const std::size_t n = mask.height;
  LabelMap out(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      auto [sy, sx] = source_of(y, x, n, t);
      out.at(y, x) = mask.at(sy, sx);
    }
  return out;
}

}  // namespace mucald
