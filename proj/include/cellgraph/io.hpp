#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cellgraph::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames over the target, so readers
/// never observe a partially written file. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Shortest-roundtrip-safe text form of a double: 17 significant digits,
/// "nan" / "inf" / "-inf" for non-finite values.
std::string format_double(double v);

/// Parses what format_double produces (plus any strtod-accepted form).
double parse_double(std::string_view text);

std::vector<std::string> split_csv_line(std::string_view line);

/// Splits text into lines, dropping a trailing '\r' and a final empty line.
std::vector<std::string> split_lines(std::string_view text);

}  // namespace cellgraph::io
