#pragma once

#include "dyntreat/config.hpp"
#include "dyntreat/environment.hpp"
#include "dyntreat/error.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dyntreat {

/// Stages in execution order. "synth" only runs when the config carries a
/// synthetic spec instead of a data path.
inline const std::vector<std::string> kStages = {"synth", "estimate", "cluster", "rates", "ewm",
                                                 "train", "evaluate", "compare", "selectivity"};

struct RunOptions {
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool deterministic = false;
  bool force = false;            // rerun even when the manifest says up to date
  std::ostream* log = nullptr;  // progress lines; nullptr = silent
};

struct StageResult {
  std::string stage;
  bool skipped = false;
  std::vector<std::string> outputs;
};

/// Thrown when a persisted artifact no longer matches its recorded hash.
struct HashMismatch : Error {
  using Error::Error;
};

/// Environment inputs with b_n and the treatment cost derived as in the
/// pipeline: b_n is the expected number of arrivals per period times the rate
/// normalization, and a positive budget_share sets the cost so the budget
/// covers that share of the expected arrivals over the horizon.
struct PreparedEnv {
  std::shared_ptr<const EnvInputs> inputs;
  double treatable_share = 0;  // budget / (cost * expected arrivals), capped at 1
};

PreparedEnv prepare_env(const PipelineConfig& config, ObservationalData data, RewardTable rewards,
                        ClusterAssignment clusters, const RateModel& rates);

/// Runs one stage, reading its inputs from the output directory. Inputs are
/// checked against the manifest; a stage whose inputs and config are unchanged
/// and whose outputs are intact is skipped unless forced.
StageResult run_stage(const std::string& stage, const PipelineConfig& config, const RunOptions& options);

/// All stages in order. Stops at the first failure, naming the stage.
std::vector<StageResult> run_pipeline(const PipelineConfig& config, const RunOptions& options);

/// Integrated value grid of the trained (or zero) policy, written as
/// <out>/dp_grid.csv.
StageResult run_dp_solve(const PipelineConfig& config, const RunOptions& options, std::size_t time_steps);

/// 64-bit content hash of a file, as hex.
std::string file_hash(const std::filesystem::path& path);
std::string file_hash_string(const std::string& content);

}  // namespace dyntreat
