#pragma once

#include "dyntreat/actor_critic.hpp"
#include "dyntreat/data.hpp"
#include "dyntreat/environment.hpp"
#include "dyntreat/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dyntreat {

inline constexpr int kConfigVersion = 1;

/// Run configuration, read from a versioned JSON document. Every section has
/// defaults so a minimal config only names its data.
struct PipelineConfig {
  std::uint64_t seed = 1;

  // data: either a CSV path (relative to the config file) or a synthetic spec
  std::optional<std::filesystem::path> data_path;
  std::optional<SynthSpec> synth;
  ColumnMapping columns;

  // estimate
  std::size_t folds = 5;
  std::optional<double> propensity = 2.0 / 3.0;  // nullopt: estimated
  bool compliance = false;

  // cluster and rates
  std::size_t clusters = 4;
  std::size_t rate_bins = 365;
  double rate_exposure = 0;
  /// Expected arrivals per period; 0 means the number of rows.
  double arrivals_per_period = 0;

  // environment; cost and b_n may be derived
  EnvConfig env;
  bool b_n_auto = true;
  /// If > 0, cost = z0 / (budget_share * expected arrivals over the horizon).
  double budget_share = 0.25;

  std::vector<std::string> policy_features = {"dynamic"};
  std::vector<std::string> value_basis = {"appendixE9"};
  TrainConfig train;

  std::size_t ewm_directions = 100000;
  std::size_t eval_episodes = 500;
  std::size_t selectivity_sims = 1000;

  std::filesystem::path base_dir;  // directory of the config file

  /// Throws ValidationError with the offending key.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  FeatureSpec feature_spec(std::size_t covariate_dim) const;
  BasisSpec basis_spec() const;
};

}  // namespace dyntreat
