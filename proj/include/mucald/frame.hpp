#pragma once
// Activation frame wire format (little-endian):
//   "MCSF" | u16 version | u32 round | u8 client | u8 split | u16 timestep |
//   u8 rank | u32 dims[rank] | f32 payload[prod(dims)]

#include <cstdint>
#include <string>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

inline constexpr std::uint16_t kFrameVersion = 1;

struct ActivationFrame {
  std::uint16_t version = kFrameVersion;
  std::uint32_t round = 0;
  std::uint8_t client = 0;
  std::uint8_t split = 1;  // 1 or 2
  std::uint16_t timestep = 0;
  std::vector<std::uint32_t> dims;
  std::vector<float> payload;

  bool operator==(const ActivationFrame&) const = default;
};

// Header bytes for a frame of the given rank.
std::size_t frame_header_size(std::size_t rank);

// Throws DimensionError if the payload length disagrees with dims and
// ConfigError for a split outside {1, 2}.
std::string encode_frame(const ActivationFrame& f);
// Decodes one frame starting at `offset` and advances it. Throws FrameError
// (with the byte offset) on bad magic, unsupported version, bad split or
// truncation.
ActivationFrame decode_frame(const std::string& bytes, std::size_t& offset);
// Decodes exactly one frame; trailing bytes are an error.
ActivationFrame decode_frame(const std::string& bytes);

// Rounds a tensor to float32 into a frame, and back.
ActivationFrame make_frame(std::uint32_t round, std::uint8_t client, std::uint8_t split,
                           std::uint16_t timestep, const Tensor& t);
Tensor frame_tensor(const ActivationFrame& f);

// Values after a float32 round trip, as the receiver sees them.
Tensor quantize_f32(const Tensor& t);

}  // namespace mucald
