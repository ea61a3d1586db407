#pragma once

// Little-endian binary file helpers shared by the feature, checkpoint and
// anchor containers. Readers track the current offset so format errors can
// name the byte where parsing failed.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gapl/errors.hpp"

namespace gapl::binio {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) throw FormatError("cannot open for writing: " + path, 0);
  }
  ~Writer() {
    if (file_) std::fclose(file_);
  }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void bytes(const void* data, std::size_t n) {
    if (std::fwrite(data, 1, n, file_) != n)
      throw FormatError("write failed: " + path_, offset_);
    offset_ += n;
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f64_array(const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f64(data[i]);
  }
  void magic(const char (&m)[5]) { bytes(m, 4); }
  void text(const std::string& s) { bytes(s.data(), s.size()); }

  std::size_t offset() const { return offset_; }

 private:
  template <typename T>
  void le(T v) {
    std::uint8_t buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    bytes(buf, sizeof(T));
  }

  std::FILE* file_ = nullptr;
  std::string path_;
  std::size_t offset_ = 0;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    file_ = std::fopen(path.c_str(), "rb");
    if (!file_) throw FormatError("cannot open for reading: " + path, 0);
  }
  ~Reader() {
    if (file_) std::fclose(file_);
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  void bytes(void* out, std::size_t n) {
    std::size_t got = std::fread(out, 1, n, file_);
    if (got != n)
      throw FormatError("truncated file: " + path_, offset_ + got);
    offset_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  void f64_array(double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f64();
  }
  void expect_magic(const char (&m)[5]) {
    char got[4];
    std::size_t at = offset_;
    bytes(got, 4);
    if (got[0] != m[0] || got[1] != m[1] || got[2] != m[2] || got[3] != m[3])
      throw FormatError(std::string("bad magic, expected \"") + m + "\"", at);
  }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_eof() {
    int c = std::fgetc(file_);
    if (c == EOF) return true;
    std::ungetc(c, file_);
    return false;
  }

  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  template <typename T>
  T le() {
    std::uint8_t buf[sizeof(T)];
    bytes(buf, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }

  std::FILE* file_ = nullptr;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace gapl::binio
