#include "adld/numerics/kv.hpp"

#include <cmath>
#include <sstream>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld {

KeyValues parse_kv_lines(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad key=value line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string format_kv_lines(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::size_t kv_count(const std::string& key, const std::string& v) {
  double d = 0;
  try {
    d = parse_double(v);
  } catch (const FormatError&) {
    throw ConfigError("key " + key + " expects an integer, got '" + v + "'");
  }
  if (d < 0 || d != std::floor(d)) {
    throw ConfigError("key " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(d);
}

double kv_number(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const FormatError&) {
    throw ConfigError("key " + key + " expects a number, got '" + v + "'");
  }
}

bool kv_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key " + key + " expects true/false, got '" + v + "'");
}

}  // namespace adld
