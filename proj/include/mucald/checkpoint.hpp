#pragma once
// Parameter checkpoint format (little-endian):
//   "MCSF" | u16 version | per tensor: u8 rank, u32 dims[rank], f64 payload
// Tensors appear in declared module order; the stream ends at EOF.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

inline constexpr char kMagic[4] = {'M', 'C', 'S', 'F'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<const Tensor*>& tensors);
std::vector<Tensor> decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<const Tensor*>& tensors);
std::vector<Tensor> read_checkpoint(const std::filesystem::path& path);

// Little-endian primitive writers/readers shared with the frame codec.
namespace le {
void put_u8(std::string& out, std::uint8_t v);
void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  double f64();
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what);
  const std::string& bytes_;
  std::size_t pos_ = 0;
};
}  // namespace le

}  // namespace mucald
