#pragma once

// Strict text-to-value conversions for config keys.

#include <stdexcept>
#include <string>

#include "mtbca/errors.hpp"

namespace mtbca {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "': expected a boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long r = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    r = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(r);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double r = 0;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
  return r;
}

}  // namespace mtbca
