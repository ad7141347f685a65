#pragma once

#include "dyntreat/arrivals.hpp"
#include "dyntreat/data.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dyntreat {

/// One latent population group: independent normal covariates and a
/// seasonal arrival density proportional to exp(b1 sin 2 pi t + b2 cos 2 pi t).
struct SynthGroup {
  double weight = 1;
  std::vector<double> mean;
  std::vector<double> sd;
  RateCoefficients arrival;
};

/// tau(x) = intercept + sum_j linear_j x_j + sum_j absolute_j |x_j|.
struct EffectSpec {
  double intercept = 0;
  std::vector<double> linear;
  std::vector<double> absolute;

  double operator()(std::span<const double> x) const;
};

struct SynthSpec {
  std::size_t n = 1000;
  std::vector<std::string> covariate_names;
  std::vector<SynthGroup> groups;
  EffectSpec effect;
  double baseline_intercept = 0;
  std::vector<double> baseline;  // untreated outcome slope per covariate
  double noise_sd = 1;
  double propensity = 2.0 / 3.0;
  /// Non-compliance: shares of always- and never-takers; an instrument column
  /// z is written when either is set.
  double always_takers = 0;
  double never_takers = 0;

  std::size_t dim() const { return covariate_names.size(); }
  void validate() const;
  /// Three covariates (age, education, earnings), four arrival groups with
  /// distinct seasons and a treatment effect whose sign varies with x.
  static SynthSpec jtpa_like(std::size_t n);
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct SynthTruth {
  std::vector<double> tau;
  std::vector<int> group;
  std::vector<int> compliance;  // 0 complier, 1 always-taker, 2 never-taker
  double ate = 0;               // population value: mean of tau over the rows
};

struct SynthOutput {
  ObservationalData data;  // raw covariates, arrival times filled
  SynthTruth truth;
};

SynthOutput synth_data(const SynthSpec& spec, std::uint64_t seed);

/// Writes <dir>/data.csv and <dir>/truth.json.
void save_synth(const std::filesystem::path& dir, const SynthOutput& out, const SynthSpec& spec);

}  // namespace dyntreat
