#pragma once

#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace suq::csv {

/// Round-trip exact decimal form; "nan" for NaN.
inline std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void header(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
}

inline void row(std::ostream& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    out << (first ? "" : ",") << number(v);
    first = false;
  }
  out << '\n';
}

inline void row(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << number(values[i]);
  out << '\n';
}

}  // namespace suq::csv
