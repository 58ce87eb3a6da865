#include "mucald/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "mucald/errors.hpp"

namespace mucald {
namespace le {

namespace {
template <typename U>
void put_uint(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}
}  // namespace

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u16(std::string& out, std::uint16_t v) { put_uint(out, v); }
void put_u32(std::string& out, std::uint32_t v) { put_uint(out, v); }
void put_f32(std::string& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }

void Reader::need(std::size_t n, const char* what) {
  if (remaining() < n) throw FrameError(std::string("truncated stream reading ") + what, pos_);
}

std::uint8_t Reader::u8() {
  need(1, "u8");
  return static_cast<std::uint8_t>(bytes_[pos_++]);
}

std::uint16_t Reader::u16() {
  need(2, "u16");
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) {
    v |= static_cast<std::uint16_t>(static_cast<unsigned char>(bytes_[pos_++]) << (8 * i));
  }
  return v;
}

std::uint32_t Reader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
  }
  return v;
}

float Reader::f32() {
  need(4, "f32 payload");
  return std::bit_cast<float>(u32());
}

double Reader::f64() {
  need(8, "f64 payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
  }
  return std::bit_cast<double>(v);
}

}  // namespace le

std::string encode_checkpoint(const std::vector<const Tensor*>& tensors) {
  std::string out(kMagic, 4);
  le::put_u16(out, kCheckpointVersion);
  for (const Tensor* t : tensors) {
    if (t->rank() > 255) throw DimensionError("checkpoint: rank exceeds 255");
    le::put_u8(out, static_cast<std::uint8_t>(t->rank()));
    for (std::size_t d : t->shape()) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t->values()) le::put_f64(out, v);
  }
  return out;
}

std::vector<Tensor> decode_checkpoint(const std::string& bytes) {
  le::Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw FrameError("checkpoint: bad magic", 0);
  }
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FrameError("checkpoint: unsupported version " + std::to_string(version), 4);
  }
  std::vector<Tensor> out;
  while (!r.at_end()) {
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (r.remaining() < n * 8) {
      throw FrameError("checkpoint: truncated payload for tensor " +
                           std::to_string(out.size()),
                       r.offset());
    }
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    out.emplace_back(std::move(shape), std::move(data));
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<const Tensor*>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace mucald
