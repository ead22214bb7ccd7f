#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "abcd/core.hpp"

namespace abcd::io {

inline void write_f64(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char buf[8];
      for (int k = 0; k < 8; ++k) buf[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
      out.write(buf, 8);
    }
  }
}

inline void read_f64(std::istream& in, std::span<double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
  } else {
    for (double& v : values) {
      unsigned char buf[8];
      in.read(reinterpret_cast<char*>(buf), 8);
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
      v = std::bit_cast<double>(bits);
    }
  }
  if (!in) throw Error("io", "unexpected end of binary data");
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int k = 0; k < 8; ++k) buf[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  out.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw Error("io", "unexpected end of binary data");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
  return v;
}

}  // namespace abcd::io
