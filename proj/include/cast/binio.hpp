#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cast/matrix.hpp"

namespace cast {

/// Raised for malformed files: bad magic, unsupported version, truncation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view bytes) { buf_.append(bytes); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  /// rows, cols, then row-major float32 payload.
  void grid(const Matrix& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) f32(static_cast<float>(v));
  }
  /// Appends `record` prefixed with its byte length.
  void record(const ByteWriter& record) {
    u32(static_cast<std::uint32_t>(record.buf_.size()));
    buf_.append(record.buf_);
  }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

/// Little-endian byte source over a borrowed buffer.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string str() { return std::string(raw(u32())); }
  Matrix grid() {
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    if (static_cast<std::uint64_t>(rows) * cols * 4 > remaining()) throw FormatError("grid payload truncated");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (double& v : m.values()) v = static_cast<double>(f32());
    return m;
  }
  ByteReader record() {
    const std::uint32_t len = u32();
    return ByteReader(raw(len));
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::string_view bytes);

}  // namespace cast
