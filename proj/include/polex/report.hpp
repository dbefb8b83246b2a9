#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace polex {

/// Rounds to 6 significant digits so report digests do not depend on noise
/// in the last bits.
inline double sig6(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return std::strtod(buf, nullptr);
}

inline std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

}  // namespace polex
