#pragma once
// Little-endian byte encoding, CRC-32 framing and atomic file writes shared
// by the dataset and checkpoint formats.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mnist1d {

class FormatError : public std::runtime_error {
 public:
  enum class Kind { kIo, kMalformed, kVersionMismatch, kChecksum };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  /// u32 length prefix followed by the bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  std::vector<std::uint8_t>& bytes() { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t n) {
    if (n > remaining() / 8) throw FormatError(FormatError::Kind::kMalformed, "array length exceeds file size");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::string raw(std::size_t n) {
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  std::string str() { return raw(u32()); }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) throw FormatError(FormatError::Kind::kMalformed, "unexpected end of payload");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

/// Write to `<path>.tmp` and rename over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatError::Kind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Framed container: magic | u32 version | payload | u32 CRC-32(payload).
inline std::vector<std::uint8_t> frame(std::string_view magic, std::uint32_t version,
                                       std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.raw(magic);
  w.u32(version);
  w.bytes().insert(w.bytes().end(), payload.begin(), payload.end());
  w.u32(crc32_of(payload));
  return std::move(w.bytes());
}

/// Inverse of frame(): checks magic, version and checksum, returns the payload.
inline std::vector<std::uint8_t> unframe(std::span<const std::uint8_t> file, std::string_view magic,
                                         std::uint32_t version) {
  const std::size_t head = magic.size() + 4;
  if (file.size() < magic.size() || std::memcmp(file.data(), magic.data(), magic.size()) != 0)
    throw FormatError(FormatError::Kind::kMalformed, "bad magic, not a " + std::string(magic) + " file");
  if (file.size() < head + 4)
    throw FormatError(FormatError::Kind::kChecksum, "file truncated before checksum");
  ByteReader r(file.subspan(magic.size(), 4));
  const auto found = r.u32();
  if (found != version)
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "format version " + std::to_string(found) + ", expected " + std::to_string(version));
  auto payload = file.subspan(head, file.size() - head - 4);
  ByteReader tail(file.subspan(file.size() - 4));
  if (tail.u32() != crc32_of(payload))
    throw FormatError(FormatError::Kind::kChecksum, "CRC-32 mismatch (file corrupt or truncated)");
  return {payload.begin(), payload.end()};
}

}  // namespace mnist1d
