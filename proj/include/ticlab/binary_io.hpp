#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

// Little-endian primitive readers/writers shared by the binary file formats.
// Reads throw std::runtime_error naming the field that hit a truncation.

namespace ticlab::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline void write_u32(std::ofstream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_i64(std::ofstream& os, std::int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64s(std::ofstream& os, const double* data,
                       std::int64_t count) {
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(count * sizeof(double)));
}

inline void write_i32s(std::ofstream& os, const int* data, std::int64_t count) {
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(count * sizeof(int)));
}

inline void write_bytes(std::ofstream& os, const char* data,
                        std::int64_t count) {
  os.write(data, static_cast<std::streamsize>(count));
}

inline std::uint32_t read_u32(std::ifstream& is, const std::string& what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("file truncated reading " + what);
  return v;
}

inline std::int64_t read_i64(std::ifstream& is, const std::string& what) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("file truncated reading " + what);
  return v;
}

inline void read_f64s(std::ifstream& is, double* data, std::int64_t count,
                      const std::string& what) {
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("file truncated reading " + what);
}

inline void read_i32s(std::ifstream& is, int* data, std::int64_t count,
                      const std::string& what) {
  is.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(int)));
  if (!is) throw std::runtime_error("file truncated reading " + what);
}

inline void read_bytes(std::ifstream& is, char* data, std::int64_t count,
                       const std::string& what) {
  is.read(data, static_cast<std::streamsize>(count));
  if (!is) throw std::runtime_error("file truncated reading " + what);
}

inline void require_magic(std::ifstream& is, const char* magic,
                          const std::string& path) {
  char got[4] = {};
  is.read(got, 4);
  if (!is || std::string(got, 4) != std::string(magic, 4)) {
    throw std::runtime_error(path + " has the wrong file magic");
  }
}

inline void require_eof(std::ifstream& is, const std::string& path) {
  is.peek();
  if (!is.eof()) throw std::runtime_error("trailing bytes in " + path);
}

}  // namespace ticlab::io
