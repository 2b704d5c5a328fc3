#pragma once

#include <charconv>
#include <string>

namespace tta {

/// Shortest decimal that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general);
  return std::string(buf, res.ptr);
}

}  // namespace tta
