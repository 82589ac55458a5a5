#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace cisrl {

namespace detail {
inline const std::array<std::uint32_t, 256>& crc32_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1U) ? 0xedb88320U ^ (c >> 1) : c >> 1;
      }
      t[i] = c;
    }
    return t;
  }();
  return table;
}
}  // namespace detail

/// CRC-32 (IEEE 802.3) over a byte range.
inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t seed = 0) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint32_t c = seed ^ 0xffffffffU;
  for (std::size_t i = 0; i < len; ++i) {
    c = detail::crc32_table()[(c ^ bytes[i]) & 0xffU] ^ (c >> 8);
  }
  return c ^ 0xffffffffU;
}

inline std::uint32_t crc32(std::string_view text, std::uint32_t seed = 0) {
  return crc32(text.data(), text.size(), seed);
}

}  // namespace cisrl
