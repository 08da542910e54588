#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

// Little-endian binary readers/writers shared by all checkpoint formats.
// Layouts are written byte by byte so files are portable across hosts.

namespace dccd::io {

inline void write_bytes(std::ostream& out, const char* p, std::size_t n) {
  out.write(p, static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("io: short write");
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  write_bytes(out, b, 8);
}

inline void write_u8(std::ostream& out, std::uint8_t v) {
  char c = static_cast<char>(v);
  write_bytes(out, &c, 1);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, sizeof(bits));
  write_u64(out, bits);
}

inline void write_f64_block(std::ostream& out, const std::vector<double>& v) {
  for (double x : v) write_f64(out, x);
}

inline void read_bytes(std::istream& in, char* p, std::size_t n) {
  in.read(p, static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("io: short read");
}

inline std::uint32_t read_u32(std::istream& in) {
  char b[4];
  read_bytes(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  char b[8];
  read_bytes(in, b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

inline std::uint8_t read_u8(std::istream& in) {
  char c;
  read_bytes(in, &c, 1);
  return static_cast<std::uint8_t>(c);
}

inline double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  __builtin_memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void read_f64_block(std::istream& in, std::vector<double>& v) {
  for (double& x : v) x = read_f64(in);
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
  char got[4];
  read_bytes(in, got, 4);
  for (int i = 0; i < 4; ++i) {
    if (got[i] != magic[i]) throw std::runtime_error("io: bad magic for " + what);
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot open for write: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open for read: " + path);
  return in;
}

}  // namespace dccd::io
