#ifndef VIGAT_CHECKPOINT_HPP
#define VIGAT_CHECKPOINT_HPP

// Checkpoint layout (little endian):
//   "VGC1" | version u16 | tying u8 (1 = tied) | output mode u8 (1 = singlelabel)
//   | F M C u32 | parameter tensors as f32 in HeadParams::for_each_tensor order
//   | CRC-32 (zlib polynomial) of every preceding byte, u32.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "vigat/binary_io.hpp"
#include "vigat/error.hpp"
#include "vigat/head.hpp"

namespace vigat {

inline constexpr std::string_view kCheckpointMagic = "VGC1";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint16_t version = kCheckpointVersion;
  Tying tying = Tying::kTied;
  OutputMode mode = OutputMode::kMultilabel;
  std::uint32_t features = 0;
  std::uint32_t layers = 0;
  std::uint32_t classes = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const HeadParams<T>& params) {
  params.validate();
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.u8(params.tying == Tying::kTied ? 1 : 0);
  w.u8(params.mode == OutputMode::kSinglelabel ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(params.features()));
  w.u32(static_cast<std::uint32_t>(params.layers()));
  w.u32(static_cast<std::uint32_t>(params.classes()));
  params.for_each_tensor([&](const Tensor2<T>& t) {
    for (T v : t.values()) w.f32(static_cast<float>(v));
  });
  const std::uint32_t crc = crc32_of(w.buffer().data(), w.buffer().size());
  w.u32(crc);
  return std::move(w.buffer());
}

inline CheckpointHeader decode_checkpoint_header(io::ByteReader& r, std::size_t total_size) {
  using K = FormatError::Kind;
  if (total_size < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError(K::kBadMagic, "not a checkpoint (bad magic)");
  }
  CheckpointHeader h;
  h.version = r.u16();
  if (h.version != kCheckpointVersion) {
    throw FormatError(K::kBadVersion, "unsupported checkpoint version " + std::to_string(h.version));
  }
  const std::uint8_t tying = r.u8(), mode = r.u8();
  if (tying > 1 || mode > 1) throw FormatError(K::kRange, "checkpoint flag byte out of range");
  h.tying = tying == 1 ? Tying::kTied : Tying::kUntied;
  h.mode = mode == 1 ? OutputMode::kSinglelabel : OutputMode::kMultilabel;
  h.features = r.u32();
  h.layers = r.u32();
  h.classes = r.u32();
  if (h.features == 0 || h.layers == 0 || h.classes == 0) {
    throw FormatError(K::kDimension, "checkpoint header has a zero dimension");
  }
  return h;
}

template <typename T = float>
HeadParams<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using K = FormatError::Kind;
  io::ByteReader r(bytes);
  const CheckpointHeader h = decode_checkpoint_header(r, bytes.size());

  HeadConfig cfg{h.features, h.classes, h.layers, h.tying, h.mode, 0.5};
  const std::uint64_t expected = std::uint64_t{param_count(cfg)} * 4 + 4;
  if (r.remaining() < expected) {
    throw FormatError(K::kTruncated, "checkpoint payload truncated");
  }
  if (r.remaining() > expected) {
    throw FormatError(K::kTrailingBytes, "checkpoint has trailing bytes");
  }
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
      static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw FormatError(K::kChecksum, "checkpoint CRC-32 mismatch");
  }

  HeadParams<T> p = HeadParams<T>::zeros_like(HeadParams<T>::initialized(cfg, 0));
  p.for_each_tensor([&](Tensor2<T>& t) {
    for (auto& v : t.values()) {
      const float x = r.f32();
      if (!std::isfinite(x)) throw FormatError(K::kNonFinite, "checkpoint holds a non-finite value");
      v = static_cast<T>(x);
    }
  });
  return p;
}

template <typename T>
void save_checkpoint(const HeadParams<T>& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params));
}

template <typename T = float>
HeadParams<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(io::read_file(path));
}

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  return decode_checkpoint_header(r, bytes.size());
}

}  // namespace vigat

#endif  // VIGAT_CHECKPOINT_HPP
