#pragma once

#include <charconv>
#include <string>
#include <string_view>

#include "colseg/core/mask.hpp"

namespace colseg {

// Row-major run lengths separated by single spaces, always starting with a run of zeros
// (possibly of length 0).
inline std::string mask_to_rle(const BinaryMask& m) {
  std::string out;
  std::uint8_t current = 0;
  long run = 0;
  for (auto v : m.values()) {
    if (v != current) {
      out += std::to_string(run);
      out += ' ';
      current = v;
      run = 0;
    }
    ++run;
  }
  out += std::to_string(run);
  return out;
}

inline BinaryMask rle_to_mask(std::string_view rle, int height, int width) {
  BinaryMask m(height, width);
  auto values = m.values();
  std::size_t pos = 0;
  std::uint8_t current = 0;
  const char* p = rle.data();
  const char* end = rle.data() + rle.size();
  while (p < end) {
    while (p < end && *p == ' ') ++p;
    if (p == end) break;
    long run = 0;
    auto [next, ec] = std::from_chars(p, end, run);
    if (ec != std::errc{} || run < 0) throw FormatError("malformed RLE token");
    if (pos + static_cast<std::size_t>(run) > values.size())
      throw FormatError("RLE overruns a " + std::to_string(height) + "x" + std::to_string(width) +
                        " mask");
    std::fill_n(values.begin() + static_cast<long>(pos), run, current);
    pos += static_cast<std::size_t>(run);
    current ^= 1;
    p = next;
  }
  if (pos != values.size()) throw FormatError("RLE covers fewer pixels than the mask");
  return m;
}

}  // namespace colseg
