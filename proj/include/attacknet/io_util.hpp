#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "attacknet/errors.hpp"

namespace attacknet {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320), as used by zip/png.
inline std::uint32_t crc32(std::string_view bytes) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      }
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char ch : bytes) {
    crc = table[(crc ^ ch) & 0xFFu] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

// Append-only little-endian byte buffer for the packed file formats.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void put_u16(std::uint16_t v) {
    put_u8(static_cast<std::uint8_t>(v & 0xFF));
    put_u8(static_cast<std::uint8_t>(v >> 8));
  }

  void put_u32(std::uint32_t v) {
    put_u16(static_cast<std::uint16_t>(v & 0xFFFF));
    put_u16(static_cast<std::uint16_t>(v >> 16));
  }

  void put_f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    put_u32(static_cast<std::uint32_t>(bits & 0xFFFFFFFFULL));
    put_u32(static_cast<std::uint32_t>(bits >> 32));
  }

  void put_bytes(std::string_view bytes) { buf_.append(bytes); }

  void put_bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }

  // Appends the CRC-32 of everything written so far.
  void put_crc32() { put_u32(crc32(buf_)); }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked little-endian reader. Reads past the end throw IoError,
// which is how a truncated file surfaces.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t get_u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint16_t get_u16() {
    const std::uint16_t lo = get_u8();
    const std::uint16_t hi = get_u8();
    return static_cast<std::uint16_t>(lo | (hi << 8));
  }

  std::uint32_t get_u32() {
    const std::uint32_t lo = get_u16();
    const std::uint32_t hi = get_u16();
    return lo | (hi << 16);
  }

  double get_f64() {
    const std::uint64_t lo = get_u32();
    const std::uint64_t hi = get_u32();
    return std::bit_cast<double>(lo | (hi << 32));
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    const std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw IoError("unexpected end of file at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string() + " for reading");
  }
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failed on " + path.string());
  }
  return bytes;
}

// Writes via a sibling temp file and renames into place, so a failed run
// never leaves a partially written output.
inline void atomic_write_file(const std::filesystem::path& path,
                              std::string_view bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot open " + tmp.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed on " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string());
  }
}

}  // namespace attacknet
