#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace matvl {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Appends one line and flushes, creating the file if needed.
void append_line(const std::filesystem::path& path, std::string_view line);

/// Non-empty lines of a text file; a missing file yields no lines.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace matvl
