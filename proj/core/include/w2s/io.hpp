#pragma once

#include <filesystem>
#include <string>

namespace w2s {

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);
/// Shortest round-trip text for a double (17 significant digits).
std::string format_double(double v);
std::string format_fixed(double v, int digits);

}  // namespace w2s
