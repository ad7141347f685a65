#include "dyntreat/data.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dyntreat {

void ObservationalData::validate() const {
  const std::size_t n = size();
  if (n < 1) throw ValidationError("dataset is empty");
  if (w.size() != n || static_cast<std::size_t>(x.rows()) != n)
    throw ValidationError("dataset columns have different lengths");
  if (!covariate_names.empty() && covariate_names.size() != dim())
    throw ValidationError("covariate names do not match covariate dimension");
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] != 0 && w[i] != 1) throw ValidationError("row " + std::to_string(i + 1) + ": treatment must be 0 or 1");
    if (!std::isfinite(y[i])) throw ValidationError("row " + std::to_string(i + 1) + ": outcome is not finite");
  }
  if (!x.allFinite()) throw ValidationError("covariates contain non-finite values");
  if (arrival_time) {
    if (arrival_time->size() != n) throw ValidationError("arrival_time length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      double t = (*arrival_time)[i];
      if (!(t >= 0.0 && t < 1.0))
        throw ValidationError("row " + std::to_string(i + 1) + ": arrival time outside [0, 1)");
    }
  }
  if (instrument) {
    if (instrument->size() != n) throw ValidationError("instrument length mismatch");
    for (std::size_t i = 0; i < n; ++i)
      if ((*instrument)[i] != 0 && (*instrument)[i] != 1)
        throw ValidationError("row " + std::to_string(i + 1) + ": instrument must be 0 or 1");
  }
}

namespace {

int find_column(const csv::Table& t, const std::string& name) {
  int c = t.column(name);
  if (c < 0) throw ValidationError("schema mismatch: column '" + name + "' not found");
  return c;
}

int parse_binary(const std::string& field, std::size_t row, const std::string& column) {
  double v = csv::parse_double(field, row, column);
  if (v != 0.0 && v != 1.0)
    throw ValidationError("row " + std::to_string(row) + ": column '" + column + "' must be 0 or 1, got '" +
                          field + "'");
  return static_cast<int>(v);
}

}  // namespace

ObservationalData parse_dataset(std::istream& in, const ColumnMapping& mapping, bool standardize) {
  csv::Table t = csv::read(in);
  if (mapping.covariates.empty()) throw ValidationError("schema: no covariate columns declared");
  const int cy = find_column(t, mapping.outcome);
  const int cw = find_column(t, mapping.treatment);
  std::vector<int> cx;
  for (const auto& name : mapping.covariates) cx.push_back(find_column(t, name));
  const int ct = mapping.arrival_time ? find_column(t, *mapping.arrival_time) : -1;
  const int cz = mapping.instrument ? find_column(t, *mapping.instrument) : -1;

  const std::size_t n = t.rows.size();
  ObservationalData d;
  d.y.resize(static_cast<Eigen::Index>(n));
  d.w.resize(n);
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cx.size()));
  d.covariate_names = mapping.covariates;
  if (ct >= 0) d.arrival_time.emplace(n);
  if (cz >= 0) d.instrument.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = t.rows[i];
    const std::size_t row = i + 1;
    d.y[static_cast<Eigen::Index>(i)] = csv::parse_double(r[cy], row, mapping.outcome);
    d.w[i] = parse_binary(r[cw], row, mapping.treatment);
    for (std::size_t j = 0; j < cx.size(); ++j)
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          csv::parse_double(r[cx[j]], row, mapping.covariates[j]);
    if (ct >= 0) (*d.arrival_time)[i] = csv::parse_double(r[ct], row, *mapping.arrival_time);
    if (cz >= 0) (*d.instrument)[i] = parse_binary(r[cz], row, *mapping.instrument);
  }
  d.validate();
  if (standardize) d.standardization = standardize_columns(d.x);
  return d;
}

ObservationalData load_dataset(const std::filesystem::path& path, const ColumnMapping& mapping, bool standardize) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_dataset(in, mapping, standardize);
}

Standardization standardize_columns(RowMatrix& x) {
  Standardization s;
  const auto n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double mean = x.col(j).sum() / n;
    double var = n > 1 ? (x.col(j).array() - mean).square().sum() / (n - 1) : 0.0;
    double sd = std::sqrt(var);
    x.col(j).array() -= mean;
    if (sd > 0) x.col(j) /= sd;
    s.mean.push_back(mean);
    s.sd.push_back(sd);
  }
  return s;
}

void save_dataset(const std::filesystem::path& path, const ObservationalData& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::vector<std::string> names = data.covariate_names;
  if (names.empty())
    for (std::size_t j = 0; j < data.dim(); ++j) names.push_back("x" + std::to_string(j + 1));
  out << "y,w";
  for (const auto& n : names) out << ',' << n;
  if (data.arrival_time) out << ",arrival_time";
  if (data.instrument) out << ",z";
  out << '\n';
  const bool scaled = !data.standardization.mean.empty();
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << csv::format(data.y[static_cast<Eigen::Index>(i)]) << ',' << data.w[i];
    auto r = data.row(i);
    for (std::size_t j = 0; j < data.dim(); ++j) {
      double v = r[j];
      if (scaled) {
        double sd = data.standardization.sd[j];
        v = (sd > 0 ? v * sd : v) + data.standardization.mean[j];
      }
      out << ',' << csv::format(v);
    }
    if (data.arrival_time) out << ',' << csv::format((*data.arrival_time)[i]);
    if (data.instrument) out << ',' << (*data.instrument)[i];
    out << '\n';
  }
}

ObservationalData select_rows(const ObservationalData& data, std::span<const std::size_t> rows) {
  ObservationalData d;
  const auto m = static_cast<Eigen::Index>(rows.size());
  d.y.resize(m);
  d.x.resize(m, data.x.cols());
  d.w.resize(rows.size());
  if (data.arrival_time) d.arrival_time.emplace(rows.size());
  if (data.instrument) d.instrument.emplace(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    const auto kk = static_cast<Eigen::Index>(k);
    d.y[kk] = data.y[i];
    d.w[k] = data.w[rows[k]];
    d.x.row(kk) = data.x.row(i);
    if (data.arrival_time) (*d.arrival_time)[k] = (*data.arrival_time)[rows[k]];
    if (data.instrument) (*d.instrument)[k] = (*data.instrument)[rows[k]];
  }
  d.covariate_names = data.covariate_names;
  d.standardization = data.standardization;
  return d;
}

}  // namespace dyntreat
