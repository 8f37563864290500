#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sparsetx::io {

/// Shortest representation that round-trips to the same double.
/// Non-finite values are written as empty strings.
std::string format_double(double value);

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> split_csv_line(std::string_view line);

std::string csv_escape(std::string_view field);

/// Whole-file read; throws FileNotFound / IoError.
std::string read_file(const std::filesystem::path& path);

/// Write via a sibling temp file and rename so readers never see partial content.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

}  // namespace sparsetx::io
