#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "iscope/error.hpp"

namespace iscope {

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

/// Little-endian byte sink.
class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  /// Appends the CRC32 of everything written so far.
  void crc() { u32(crc32_of(bytes_)); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  void save(const std::string& path) const { write_bytes(path, bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian byte source with offset-carrying parse errors.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  static ByteReader from_file(const std::string& path) { return ByteReader(read_bytes(path)); }

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0)
      throw ParseError("bad magic, expected '" + std::string(magic) + "'", pos_);
    pos_ += magic.size();
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  double f64() { return std::bit_cast<double>(get(8, "f64")); }
  std::vector<double> f64s(std::uint64_t count) {
    if (count > (bytes_.size() - pos_) / 8) throw ParseError("truncated array of " + std::to_string(count) + " doubles", pos_);
    std::vector<double> v(count);
    for (auto& x : v) x = f64();
    return v;
  }

  /// Checks the trailing CRC32 against the bytes before it; must be the last field.
  void verify_crc() {
    const std::size_t at = pos_;
    const std::uint32_t want = crc32_of(std::span(bytes_.data(), at));
    const std::uint32_t got = u32();
    if (got != want) throw ParseError("CRC32 mismatch", at);
    if (pos_ != bytes_.size()) throw ParseError("trailing bytes after CRC", pos_);
  }

  std::size_t offset() const noexcept { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated while reading ") + what, pos_);
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace iscope
