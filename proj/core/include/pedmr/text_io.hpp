#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pedmr::io {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

std::vector<std::string> split_whitespace(std::string_view line);
/// Plain comma split; fields are trimmed. Quoting is not supported.
std::vector<std::string> split_csv(std::string_view line);

/// Non-empty lines with trailing CR removed; lines starting with '#' skipped.
std::vector<std::string_view> data_lines(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column, throwing ParseError if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);

double parse_double(std::string_view token, std::string_view context);
long long parse_int(std::string_view token, std::string_view context);

/// Shortest round-trippable decimal representation.
std::string format_double(double v);

}  // namespace pedmr::io
