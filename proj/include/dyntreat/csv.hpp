#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dyntreat::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name, or -1.
  int column(const std::string& name) const;
};

/// Plain comma-separated values with a header row. No quoting support; the
/// files this project reads and writes never contain commas inside fields.
Table read(std::istream& in);
Table read_file(const std::filesystem::path& path);

double parse_double(const std::string& field, std::size_t row, const std::string& column);

/// Shortest round-trip decimal representation.
std::string format(double v);

}  // namespace dyntreat::csv
