#pragma once

// Little-endian stream primitives shared by the RBF1 / RBD1 / RBM1 formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "rbr/error.hpp"

namespace rbr::binio {

template <typename U>
inline void put_uint(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

inline void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { put_uint(os, v); }
inline void put_f32(std::ostream& os, float v) { put_uint(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), magic.size()); }

/// Reader that turns short reads into TruncatedFile errors naming the field.
class Reader {
 public:
  Reader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  void bytes(char* out, std::size_t n, const char* field) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw Error(ErrorCode::TruncatedFile, source_ + ": unexpected end of file reading " + field);
  }

  template <typename U>
  U uint(const char* field) {
    std::array<unsigned char, sizeof(U)> b{};
    bytes(reinterpret_cast<char*>(b.data()), b.size(), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }

  std::uint32_t u32(const char* field) { return uint<std::uint32_t>(field); }
  std::uint64_t u64(const char* field) { return uint<std::uint64_t>(field); }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    is_.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (static_cast<std::size_t>(is_.gcount()) != magic.size() || got != magic)
      throw Error(ErrorCode::BadMagic, source_ + ": expected magic '" + std::string(magic) + "'");
  }

  const std::string& source() const noexcept { return source_; }

 private:
  std::istream& is_;
  std::string source_;
};

}  // namespace rbr::binio
