#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sctc {

// Minimal CSV support: mandatory header row, comma separator, UTF-8, '.'
// decimal point, no quoting (fields may not contain commas, quotes or
// newlines). Numbers are written with up to 17 significant digits so values
// round-trip exactly.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column_index(const std::string& name) const;  // throws if absent
  bool has_column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// "%.17g"-style shortest exact representation.
std::string format_double(double x);

// Strict parse; row/column context is included in the error message.
double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

}  // namespace sctc
