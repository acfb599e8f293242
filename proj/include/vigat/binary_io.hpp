#ifndef VIGAT_BINARY_IO_HPP
#define VIGAT_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "vigat/error.hpp"

namespace vigat::io {

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  /// u16 length prefix followed by the raw bytes.
  void short_string(std::string_view s) {
    if (s.size() > UINT16_MAX) throw ParameterError("string longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s);
  }

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t>& buffer() noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source; running past the end raises a truncation error.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }

  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::string short_string() { return bytes(u16()); }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  /// Verifies that `count` items of `item_size` bytes are still available.
  void need_items(std::uint64_t count, std::uint64_t item_size) const {
    if (item_size != 0 && count > remaining() / item_size) {
      throw FormatError(FormatError::Kind::kTruncated,
                        "payload truncated at byte " + std::to_string(pos_));
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError(FormatError::Kind::kTruncated,
                        "payload truncated at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace vigat::io

#endif  // VIGAT_BINARY_IO_HPP
