// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtlc {

/// RFC-4180 table: one header row plus data rows. Fields containing a comma,
/// quote, CR or LF are quoted on output; LF line endings throughout.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
  /// Index of a header column; throws SchemaError naming the file context.
  std::size_t require_column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);
std::string to_csv(const CsvTable& table);
/// Writes via a temporary file and rename so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);
std::string format_optional(const std::optional<double>& value);

double parse_double(std::string_view field);
std::int64_t parse_int(std::string_view field);

}  // namespace mtlc
