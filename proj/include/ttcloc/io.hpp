#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

namespace ttcloc::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Shortest decimal representation that round-trips the double.
std::string format_double(double v);

}  // namespace ttcloc::io
