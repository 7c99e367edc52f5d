#include "unlab/common.hpp"

#include <cstdio>
#include <cstdlib>

namespace unlab {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace unlab
