// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary formats.
//
//   .lbf  "LCDB" u8 version=1, u32 rows, u32 cols, u32 n_samples,
//         rows*cols f32 weights, n_samples*cols f32 activations
//   .lcl  "LCDC" u8 version=1, u32 rows, u32 cols, u8 b, u8 index_width,
//         u16 K, f32 s_m, f32 s_q, K f32 centroids, packed indices

#pragma once

#include "lcd/core.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace lcd {

inline constexpr std::array<char, 4> kBundleMagic{'L', 'C', 'D', 'B'};
inline constexpr std::array<char, 4> kCompressedMagic{'L', 'C', 'D', 'C'};
inline constexpr std::uint8_t kFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> data) : data_(data) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw LengthError("truncated payload");
  }
  std::span<const char> bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint16_t u16() {
    auto s = bytes(2);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(s[0]) |
                                      (static_cast<std::uint8_t>(s[1]) << 8));
  }
  std::uint32_t u32() {
    auto s = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const char> data_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("write failed for " + path.string());
}

inline void check_header(ByteReader& r, const std::array<char, 4>& magic) {
  auto m = r.bytes(4);
  if (!std::equal(m.begin(), m.end(), magic.begin())) throw FormatError("bad magic");
  if (r.u8() != kFormatVersion) throw FormatError("unsupported version");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layer bundles
// ---------------------------------------------------------------------------

inline std::vector<char> encode_layer_bundle(const LayerBundle& b) {
  b.validate();
  detail::ByteWriter w;
  w.bytes(kBundleMagic.data(), 4);
  w.u8(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(b.rows));
  w.u32(static_cast<std::uint32_t>(b.cols));
  w.u32(static_cast<std::uint32_t>(b.n_samples()));
  for (double v : b.weights) w.f32(static_cast<float>(v));
  for (double v : b.calib) w.f32(static_cast<float>(v));
  return w.data();
}

inline LayerBundle decode_layer_bundle(std::span<const char> data) {
  detail::ByteReader r(data);
  detail::check_header(r, kBundleMagic);
  LayerBundle b;
  b.rows = r.u32();
  b.cols = r.u32();
  const std::size_t n = r.u32();
  if (b.rows == 0 || b.cols == 0 || n == 0) throw InvariantError("layer bundle has an empty dimension");
  const std::size_t nw = b.rows * b.cols;
  const std::size_t nc = n * b.cols;
  r.need((nw + nc) * 4);
  b.weights.resize(nw);
  b.calib.resize(nc);
  for (auto& v : b.weights) v = r.f32();
  for (auto& v : b.calib) v = r.f32();
  if (r.remaining() != 0) throw LengthError("trailing bytes after layer bundle payload");
  b.validate();
  return b;
}

inline void save_layer_bundle(const LayerBundle& b, const std::filesystem::path& path) {
  detail::write_file(path, encode_layer_bundle(b));
}

inline LayerBundle load_layer_bundle(const std::filesystem::path& path) {
  const auto data = detail::read_file(path);
  return decode_layer_bundle(data);
}

// ---------------------------------------------------------------------------
// Compressed layers
// ---------------------------------------------------------------------------

inline std::vector<char> encode_compressed_layer(const CompressedLayer& l) {
  l.validate();
  detail::ByteWriter w;
  w.bytes(kCompressedMagic.data(), 4);
  w.u8(kFormatVersion);
  w.u32(l.rows);
  w.u32(l.cols);
  w.u8(static_cast<std::uint8_t>(l.b));
  w.u8(static_cast<std::uint8_t>(l.index_width()));
  w.u16(static_cast<std::uint16_t>(l.centroids.size()));
  w.f32(l.s_m);
  w.f32(l.s_q);
  for (float c : l.centroids) w.f32(c);
  w.bytes(reinterpret_cast<const char*>(l.packed_indices.data()), l.packed_indices.size());
  return w.data();
}

inline CompressedLayer decode_compressed_layer(std::span<const char> data) {
  detail::ByteReader r(data);
  detail::check_header(r, kCompressedMagic);
  CompressedLayer l;
  l.rows = r.u32();
  l.cols = r.u32();
  l.b = r.u8();
  const int width = r.u8();
  const std::size_t k = r.u16();
  l.s_m = r.f32();
  l.s_q = r.f32();
  if (width != 4 && width != 8) throw InvariantError("index width must be 4 or 8");
  if (k == 0) throw InvariantError("centroid count is zero");
  if ((k <= 16) != (width == 4)) throw InvariantError("index width disagrees with centroid count");
  l.centroids.resize(k);
  for (auto& c : l.centroids) c = r.f32();
  const std::size_t nbytes = packed_size(l.weight_count(), width);
  auto packed = r.bytes(nbytes);
  l.packed_indices.assign(reinterpret_cast<const std::uint8_t*>(packed.data()),
                          reinterpret_cast<const std::uint8_t*>(packed.data()) + nbytes);
  if (r.remaining() != 0) throw LengthError("trailing bytes after compressed layer payload");
  l.validate();
  return l;
}

inline void save_compressed_layer(const CompressedLayer& l, const std::filesystem::path& path) {
  detail::write_file(path, encode_compressed_layer(l));
}

inline CompressedLayer load_compressed_layer(const std::filesystem::path& path) {
  const auto data = detail::read_file(path);
  return decode_compressed_layer(data);
}

}  // namespace lcd
