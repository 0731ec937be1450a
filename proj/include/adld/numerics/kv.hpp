#pragma once

#include <map>
#include <string>

namespace adld {

using KeyValues = std::map<std::string, std::string>;

// "key=value" lines; blank lines are skipped. Malformed lines raise FormatError.
KeyValues parse_kv_lines(const std::string& text);
std::string format_kv_lines(const KeyValues& kv);

// Typed reads that raise ConfigError naming the key.
std::size_t kv_count(const std::string& key, const std::string& v);
double kv_number(const std::string& key, const std::string& v);
bool kv_bool(const std::string& key, const std::string& v);

}  // namespace adld
