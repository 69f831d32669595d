#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace advlab {

/// Shortest decimal form with 6 significant digits, as used in every emitted
/// table.
inline std::string format_g6(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

/// `v` rounded to the value `format_g6` prints, for JSON output.
inline double round_g6(double v) { return std::stod(format_g6(v)); }

/// Splits one CSV line on commas. Fields never contain quotes or commas in
/// the files this library writes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace advlab
