#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace adld {

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace adld
