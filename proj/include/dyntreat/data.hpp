#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dyntreat {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Which CSV columns hold which variables.
struct ColumnMapping {
  std::string outcome = "y";
  std::string treatment = "w";
  std::vector<std::string> covariates;
  std::optional<std::string> arrival_time;
  std::optional<std::string> instrument;
};

/// Per-covariate z-score constants; sd == 0 marks a constant column (centered only).
struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;
};

/// Offline sample {Y, W, X, arrival time, instrument}. Covariates are stored
/// standardized when loaded through load_dataset.
struct ObservationalData {
  Eigen::VectorXd y;
  std::vector<int> w;
  RowMatrix x;
  std::optional<std::vector<double>> arrival_time;
  std::optional<std::vector<int>> instrument;
  std::vector<std::string> covariate_names;
  Standardization standardization;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(x.cols())};
  }

  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

/// Parses and validates; rows with missing or non-numeric Y/W/X are rejected
/// with the offending (1-based data) row index in the message.
ObservationalData parse_dataset(std::istream& in, const ColumnMapping& mapping, bool standardize = true);
ObservationalData load_dataset(const std::filesystem::path& path, const ColumnMapping& mapping,
                               bool standardize = true);

/// Z-scores the columns of x in place and returns the constants used.
Standardization standardize_columns(RowMatrix& x);

/// Writes raw (unstandardized) values; the inverse of load_dataset up to the
/// standardization step.
void save_dataset(const std::filesystem::path& path, const ObservationalData& data);

/// Rows picked by index (with repetition), keeping standardization metadata.
ObservationalData select_rows(const ObservationalData& data, std::span<const std::size_t> rows);

}  // namespace dyntreat
