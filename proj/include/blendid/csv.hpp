#pragma once

#include <cstdio>
#include <string>

namespace blendid {

// Shortest round-trippable decimal form; keeps emitted CSVs bit-stable.
inline std::string csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace blendid
