#pragma once

#include "dyntreat/environment.hpp"
#include "dyntreat/evaluation.hpp"
#include "dyntreat/policy.hpp"
#include "dyntreat/value.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dyntreat {

enum class UpdateMode {
  lock_per_batch,  // batch deltas applied under a mutex (default)
  hogwild,         // per-entry atomic adds, no lock
  single_writer,   // workers interleaved round-robin on one thread; bitwise reproducible
};

std::string to_string(UpdateMode m);
UpdateMode parse_update_mode(std::string_view s);

struct TrainConfig {
  double alpha_theta = 5.0;
  double alpha_v = 0.01;
  std::size_t batch_size = 1024;
  std::size_t workers = 1;
  std::size_t max_updates = 0;   // global batch updates; 0 = no limit
  std::size_t max_episodes = 0;  // total over workers; 0 = no limit
  std::size_t eval_every = 0;    // in global updates; 0 = only at the end
  std::size_t eval_episodes = 500;
  std::uint64_t seed = 0;
  double clip_norm = 0;  // > 0 caps the norm of each applied theta delta
  double divergence_threshold = 1e6;
  UpdateMode mode = UpdateMode::lock_per_batch;
  bool log_progress = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpisodeStats {
  double welfare = 0;
  std::size_t length = 0;
  std::size_t treatments = 0;
};

/// One episode of the single-worker actor-critic with per-step updates:
///   theta += alpha_theta I delta grad log pi,  nu += alpha_v delta phi.
/// Throws DivergenceError with the offending state on a non-finite update.
EpisodeStats train_episode(const Environment& env, PolicyParams& params, ValueWeights& weights,
                           const TrainConfig& config, Rng& rng);

struct CurvePoint {
  std::size_t update_index = 0;
  std::size_t episodes = 0;
  double mean_welfare = 0;
  double ci_halfwidth = 0;
  double relative_welfare = 0;
  double theta_norm = 0;
};

struct TrainedPolicy {
  PolicyParams policy;
  ValueWeights value;
  std::vector<CurvePoint> curve;
  TrainConfig config;
  std::size_t updates = 0;
  std::size_t episodes = 0;
  std::string status = "ok";  // "ok", "diverged" or "failed"
  std::string message;
  double wall_seconds = 0;  // kept out of the JSON artifact

  bool ok() const { return status == "ok"; }
};

void to_json(nlohmann::json& j, const TrainedPolicy& t);
void from_json(const nlohmann::json& j, TrainedPolicy& t);

/// Batched asynchronous actor-critic with P workers and batch size B. Each
/// worker takes a snapshot of (theta, nu) before every step, accumulates the
/// per-step update terms, and adds their sum divided by B to the shared
/// parameters after B steps or at the end of an episode. Divergence (a norm
/// above the threshold or a non-finite entry) stops training with status
/// "diverged"; the returned parameters are the last finite ones.
TrainedPolicy train_a3c(const TrainConfig& config, const Environment& env, PolicyParams init, ValueWeights init_value);

/// Monte Carlo estimate of E[sum_t e^{-beta (t - t0)} delta grad log pi] per
/// episode, from on-policy episodes totalling at least n_steps decisions.
struct GradientEstimate {
  Eigen::VectorXd per_episode;
  std::size_t episodes = 0;
  std::size_t steps = 0;
};

GradientEstimate policy_gradient_estimate(const Environment& env, const PolicyParams& params,
                                          const ValueWeights& weights, std::size_t n_steps, Rng& rng);

struct TdOptions {
  double alpha_v = 0.01;
  std::size_t episodes = 1000;
  /// Start each episode at a uniformly drawn in-domain (z, t) instead of (z0, t0).
  bool exploring_starts = false;
  /// > 0: exploring budgets are drawn from z0 - k * z_step (the budgets
  /// reachable from z0 when every treatment costs z_step).
  double z_step = 0;
  /// Return the running average of nu over the second half of the episodes.
  bool average = false;
};

/// TD(0) policy evaluation at fixed theta (the critic alone).
ValueWeights td_evaluate(const Environment& env, const PolicyParams& params, ValueWeights weights,
                         const TdOptions& options, Rng& rng);

void save_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

}  // namespace dyntreat
