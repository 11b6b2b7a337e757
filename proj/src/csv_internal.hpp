#pragma once
#include <stdexcept>
#include <string>
#include <vector>

#include "relureduce/errors.hpp"

namespace relureduce::csvi {

// Comma split; strips CR and stray spaces so CRLF tables load unchanged.
inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_num(const std::string& s, const std::string& line) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("csv: malformed numeric field '" + s + "' in row '" + line + "'");
  }
}

}  // namespace relureduce::csvi
