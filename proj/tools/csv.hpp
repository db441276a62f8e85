#pragma once

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace trip::cli {

// Bad input data: malformed rows, non-numeric or non-finite fields.
class data_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CsvRow {
  std::size_t line = 0; // 1-based line number in the file
  std::vector<std::string> fields;
};

inline std::string trim(const std::string& s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char delim = ',')
{
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, delim))
    out.push_back(trim(field));
  if (!line.empty() && line.back() == delim)
    out.emplace_back();
  return out;
}

/// Comma-separated rows; blank lines are skipped. Every row must have the
/// same number of fields as the first.
inline std::vector<CsvRow> read_csv(std::istream& in, bool header)
{
  std::vector<CsvRow> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  bool skipped_header = !header;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    CsvRow row{lineno, split(line)};
    if (width == 0)
      width = row.fields.size();
    else if (row.fields.size() != width)
      throw data_error("line " + std::to_string(lineno) + ": expected " + std::to_string(width) +
                       " fields, found " + std::to_string(row.fields.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<CsvRow> read_csv(const std::string& path, bool header)
{
  std::ifstream in(path);
  if (!in)
    throw data_error("cannot open data file '" + path + "'");
  return read_csv(in, header);
}

inline double parse_real(const std::string& field, std::size_t line)
{
  if (field.empty())
    throw data_error("line " + std::to_string(line) + ": empty numeric field");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || errno == ERANGE)
    throw data_error("line " + std::to_string(line) + ": '" + field + "' is not a number");
  if (!std::isfinite(v))
    throw data_error("line " + std::to_string(line) + ": non-finite value '" + field + "'");
  return v;
}

inline std::size_t parse_index(const std::string& field, std::size_t line)
{
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(field.c_str(), &end, 10);
  if (field.empty() || end != field.c_str() + field.size() || errno == ERANGE || v < 0)
    throw data_error("line " + std::to_string(line) + ": '" + field +
                     "' is not a non-negative integer");
  return static_cast<std::size_t>(v);
}

inline std::string format_real(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace trip::cli
