#include "mucald/frame.hpp"

#include <cstring>
#include <limits>

#include "mucald/checkpoint.hpp"
#include "mucald/errors.hpp"

namespace mucald {

std::size_t frame_header_size(std::size_t rank) { return 4 + 2 + 4 + 1 + 1 + 2 + 1 + 4 * rank; }

std::string encode_frame(const ActivationFrame& f) {
  if (f.split != 1 && f.split != 2) {
    throw ConfigError("frame.split: must be 1 or 2, got " + std::to_string(f.split));
  }
  if (f.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw DimensionError("frame rank exceeds 255");
  }
  std::size_t n = 1;
  for (auto d : f.dims) n *= d;
  if (n != f.payload.size()) {
    throw DimensionError("frame payload has " + std::to_string(f.payload.size()) +
                         " values but dims imply " + std::to_string(n));
  }
  std::string out;
  out.reserve(frame_header_size(f.dims.size()) + 4 * n);
  out.append(kMagic, 4);
  le::put_u16(out, f.version);
  le::put_u32(out, f.round);
  le::put_u8(out, f.client);
  le::put_u8(out, f.split);
  le::put_u16(out, f.timestep);
  le::put_u8(out, static_cast<std::uint8_t>(f.dims.size()));
  for (auto d : f.dims) le::put_u32(out, d);
  for (float v : f.payload) le::put_f32(out, v);
  return out;
}

namespace {

class Cursor {
 public:
  Cursor(const std::string& bytes, std::size_t pos) : b_(bytes), pos_(pos) {}

  std::uint64_t uint(std::size_t n, const char* what) {
    need(n, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += n;
    return v;
  }
  float f32() {
    const auto bits = static_cast<std::uint32_t>(uint(4, "f32 payload"));
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FrameError(std::string("truncated frame reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::string& b_;
  std::size_t pos_;
};

}  // namespace

ActivationFrame decode_frame(const std::string& bytes, std::size_t& offset) {
  if (offset > bytes.size()) throw FrameError("frame offset past end of stream", offset);
  Cursor c(bytes, offset);
  c.need(4, "magic");
  if (std::memcmp(bytes.data() + offset, kMagic, 4) != 0) throw FrameError("bad frame magic", offset);
  c.uint(4, "magic");
  ActivationFrame f;
  const std::size_t version_at = c.pos();
  f.version = static_cast<std::uint16_t>(c.uint(2, "version"));
  if (f.version != kFrameVersion) {
    throw FrameError("unsupported frame version " + std::to_string(f.version), version_at);
  }
  f.round = static_cast<std::uint32_t>(c.uint(4, "round"));
  f.client = static_cast<std::uint8_t>(c.uint(1, "client"));
  const std::size_t split_at = c.pos();
  f.split = static_cast<std::uint8_t>(c.uint(1, "split"));
  if (f.split != 1 && f.split != 2) {
    throw FrameError("frame split must be 1 or 2, got " + std::to_string(f.split), split_at);
  }
  f.timestep = static_cast<std::uint16_t>(c.uint(2, "timestep"));
  const std::size_t rank = c.uint(1, "rank");
  f.dims.resize(rank);
  std::size_t n = 1;
  for (auto& d : f.dims) {
    const std::size_t at = c.pos();
    d = static_cast<std::uint32_t>(c.uint(4, "dims"));
    if (d != 0 && n > c.remaining() / d) throw FrameError("frame dims exceed stream length", at);
    n *= d;
  }
  if (n > c.remaining() / 4) {
    throw FrameError("truncated payload: need " + std::to_string(4 * n) + " bytes, have " +
                         std::to_string(c.remaining()),
                     c.pos());
  }
  f.payload.resize(n);
  for (auto& v : f.payload) v = c.f32();
  offset = c.pos();
  return f;
}

ActivationFrame decode_frame(const std::string& bytes) {
  std::size_t offset = 0;
  auto f = decode_frame(bytes, offset);
  if (offset != bytes.size()) throw FrameError("trailing bytes after frame", offset);
  return f;
}

ActivationFrame make_frame(std::uint32_t round, std::uint8_t client, std::uint8_t split,
                           std::uint16_t timestep, const Tensor& t) {
  ActivationFrame f;
  f.round = round;
  f.client = client;
  f.split = split;
  f.timestep = timestep;
  for (auto d : t.shape()) f.dims.push_back(static_cast<std::uint32_t>(d));
  f.payload.reserve(t.size());
  for (double v : t.values()) f.payload.push_back(static_cast<float>(v));
  return f;
}

Tensor frame_tensor(const ActivationFrame& f) {
  Shape shape(f.dims.begin(), f.dims.end());
  Tensor t(shape);
  for (std::size_t i = 0; i < f.payload.size(); ++i) t.data()[i] = f.payload[i];
  return t;
}

Tensor quantize_f32(const Tensor& t) {
  Tensor q(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) q.data()[i] = static_cast<float>(t.data()[i]);
  return q;
}

}  // namespace mucald
