#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segcls/error.hpp"

// Little-endian primitives shared by the LMEL, LNRM and SSCK file formats.
namespace segcls::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& os, float f) { write_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline void write_f32s(std::ostream& os, std::span<const float> values) {
  for (float f : values) write_f32(os, f);
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

inline std::vector<float> read_f32s(std::istream& is, std::size_t n) {
  std::vector<float> out(n);
  for (auto& f : out) f = read_f32(is);
  return out;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
    throw DataError("bad magic: expected " + std::string(magic));
}

}  // namespace segcls::io
