#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "tbg/common.hpp"

namespace tbg {

// Little-endian binary buffer writer for the TBGE/TBGN/TBGC formats.
class BinaryWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  void bytes(const void* p, std::size_t n) {
    buf_.insert(buf_.end(), static_cast<const char*>(p),
                static_cast<const char*>(p) + n);
  }
  // u32 length prefix + UTF-8 bytes
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::size_t size() const { return buf_.size(); }
  const std::string& data() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

// Bounds-checked reader; errors carry the byte offset of the failure.
class BinaryReader {
 public:
  BinaryReader(const void* data, std::size_t len, std::string what)
      : p_(static_cast<const unsigned char*>(data)), len_(len),
        what_(std::move(what)) {}
  explicit BinaryReader(const std::string& s, std::string what)
      : BinaryReader(s.data(), s.size(), std::move(what)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + off_), n);
    off_ += n;
    return s;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_ + off_, n);
    off_ += n;
  }
  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return len_ - off_; }
  bool at_end() const { return off_ == len_; }

  void need(std::size_t n) {
    if (off_ + n > len_)
      throw Error("TRUNCATED", what_ + ": truncated at byte offset " +
                                    std::to_string(off_) + " (need " +
                                    std::to_string(n) + " more bytes)");
  }

 private:
  std::uint64_t le(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(p_[off_ + i]) << (8 * i);
    off_ += n;
    return v;
  }
  const unsigned char* p_;
  std::size_t len_;
  std::size_t off_ = 0;
  std::string what_;
};

std::uint32_t crc32_bytes(const void* data, std::size_t len);
inline std::uint32_t crc32_bytes(const std::string& s) {
  return crc32_bytes(s.data(), s.size());
}

// Write via temp file + rename so readers never observe partial artifacts.
void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace tbg
