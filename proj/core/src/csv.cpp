#include "sctc/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sctc/common.hpp"

namespace sctc {

std::size_t CsvTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw std::runtime_error("csv: missing column '" + name + "'");
}

bool CsvTable::has_column(const std::string& name) const {
  for (const auto& c : columns)
    if (c == name) return true;
  return false;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "csv: cannot open " + path.string());

  CsvTable table;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "csv: " + path.string() + " is empty");
  table.columns = split_line(line);
  require(!table.columns.empty() && !table.columns[0].empty(),
          "csv: " + path.string() + " has no header");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_line(line);
    require(fields.size() == table.columns.size(),
            "csv: " + path.string() + " line " + std::to_string(line_no) + " has " +
                std::to_string(fields.size()) + " fields, expected " +
                std::to_string(table.columns.size()));
    table.rows.push_back(std::move(fields));
  }
  return table;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path);
  require(out.good(), "csv: cannot write " + path.string());

  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      require(fields[i].find_first_of(",\"\n") == std::string::npos,
              "csv: field contains a comma, quote or newline: " + fields[i]);
      if (i) out << ',';
      out << fields[i];
    }
    out << '\n';
  };
  emit(table.columns);
  for (const auto& row : table.rows) {
    require(row.size() == table.columns.size(), "csv: row width mismatch on write");
    emit(row);
  }
  require(out.good(), "csv: write failed for " + path.string());
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    require(pos == s.size(), "non-numeric value '" + s + "' at " + context);
    return v;
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("non-numeric value '" + s + "' at " + context);
  } catch (const std::out_of_range&) {
    throw std::runtime_error("out-of-range value '" + s + "' at " + context);
  }
}

long parse_long(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    require(pos == s.size(), "non-integer value '" + s + "' at " + context);
    return v;
  } catch (const std::invalid_argument&) {
    throw std::runtime_error("non-integer value '" + s + "' at " + context);
  } catch (const std::out_of_range&) {
    throw std::runtime_error("out-of-range value '" + s + "' at " + context);
  }
}

}  // namespace sctc
