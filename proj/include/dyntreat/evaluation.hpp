#pragma once

#include "dyntreat/environment.hpp"
#include "dyntreat/policy.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dyntreat {

/// A frozen policy as seen by the evaluator: either the soft-max policy or
/// its thresholded rule.
struct EvalPolicy {
  PolicyParams params;
  bool deterministic = false;

  double probability(const StateView& s) const;
  /// Action from a uniform draw u; the same u is used by every policy under
  /// comparison so episodes share their random numbers.
  int act(const StateView& s, double u) const;

  static EvalPolicy stochastic(PolicyParams p) { return {std::move(p), false}; }
  static EvalPolicy threshold(PolicyParams p) { return {std::move(p), true}; }
  /// pi = 1/2 everywhere.
  static EvalPolicy random();
  static EvalPolicy treat_all();
  static EvalPolicy treat_none();
};

struct EvalOptions {
  std::size_t episodes = 500;
  std::uint64_t seed = 0;
  bool parallel = true;
  /// Also evaluate the random 50% policy on the same episodes.
  bool relative = true;
};

struct EpisodeOutcome {
  double welfare = 0;
  std::size_t steps = 0;
  std::size_t treatments = 0;
  bool exhausted = false;  // ended because the budget hit its floor
};

struct EvalReport {
  std::size_t episodes = 0;
  double mean_welfare = 0;
  double ci_halfwidth = 0;  // 1.96 sd / sqrt(episodes)
  double random_welfare = 0;
  double relative_welfare = 0;  // mean / random mean; 0 when not computed
  double relative_ci_halfwidth = 0;
  double treatment_share = 0;
  double exhaustion_rate = 0;
  double mean_steps = 0;
  std::vector<double> per_episode;
};

/// Episode e draws arrivals from substream (seed, "eval-arrivals", e) and
/// action uniforms from (seed, "eval-actions", e).
EpisodeOutcome run_eval_episode(const EvalPolicy& policy, const Environment& env, std::uint64_t seed,
                                std::size_t episode);

EvalReport evaluate_welfare(const EvalPolicy& policy, const Environment& env, const EvalOptions& options = {});

struct PairedReport {
  EvalReport a;
  EvalReport b;
  double mean_difference = 0;  // a - b
  double ci_halfwidth = 0;     // of the paired differences
  double ratio = 0;            // mean a / mean b
};

PairedReport compare(const EvalPolicy& a, const EvalPolicy& b, const Environment& env,
                     const EvalOptions& options = {});

/// Rejections preceding each treatment, grouped by calendar month of the
/// treatment and by budget decile at the time of treatment.
struct SelectivityReport {
  std::size_t sims = 0;
  std::size_t events = 0;
  double mean_rejections = 0;
  std::array<double, 12> month_mean{};
  std::array<std::size_t, 12> month_events{};
  std::array<double, 10> decile_mean{};
  std::array<std::size_t, 10> decile_events{};
  double decile_low = 0;  // the deciles partition [decile_low, decile_high]
  double decile_high = 1;
};

SelectivityReport selectivity_stats(const EvalPolicy& policy, const Environment& env, std::size_t sims,
                                    std::uint64_t seed, bool parallel = true);

/// Pairwise (cascade) summation, independent of how the work was split.
double pairwise_sum(std::span<const double> v);

void to_json(nlohmann::json& j, const EvalReport& r);
void to_json(nlohmann::json& j, const PairedReport& r);
void to_json(nlohmann::json& j, const SelectivityReport& r);

}  // namespace dyntreat
