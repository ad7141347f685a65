#include "dyntreat/csv.hpp"

#include "dyntreat/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

namespace dyntreat::csv {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // tolerate surrounding blanks and CRLF files
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

Table read(std::istream& in) {
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    fields.resize(t.header.size());
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ValidationError("csv: missing header row");
  return t;
}

Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read(in);
}

double parse_double(const std::string& field, std::size_t row, const std::string& column) {
  double v = 0;
  const char* first = field.data();
  const char* last = first + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ValidationError("row " + std::to_string(row) + ": column '" + column + "' has invalid value '" +
                          field + "'");
  return v;
}

std::string format(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace dyntreat::csv
