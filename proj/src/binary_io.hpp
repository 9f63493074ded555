#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "can/errors.hpp"

namespace can::detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, std::size_t& offset, const char* what) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), sizeof(T))) {
    throw ParseError(std::string("unexpected end of file reading ") + what, offset);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  offset += sizeof(T);
  return value;
}

inline void expect_magic(std::istream& in, std::size_t& offset, const char (&magic)[5]) {
  char got[4];
  if (!in.read(got, 4)) {
    throw ParseError("unexpected end of file reading magic", offset);
  }
  if (std::memcmp(got, magic, 4) != 0) {
    throw ParseError(std::string("bad magic, expected ") + magic, offset);
  }
  offset += 4;
}

}  // namespace can::detail
