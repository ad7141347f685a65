#pragma once

#include "dyntreat/arrivals.hpp"
#include "dyntreat/environment.hpp"
#include "dyntreat/policy.hpp"
#include "dyntreat/value.hpp"

#include <cstdint>
#include <vector>

namespace dyntreat {

enum class OnlineSchedule { constant, harmonic };  // alpha, or alpha / n

struct OnlineConfig {
  double alpha_theta = 1.0;
  OnlineSchedule schedule = OnlineSchedule::constant;
  double alpha_v = 0.01;
  std::size_t min_history = 20;
  double sweep_tolerance = 1e-4;  // max |change in nu| over a sweep
  std::size_t episodes_per_sweep = 10;
  std::size_t max_sweeps = 100;
};

/// Everything observed so far: covariates, actions with the probabilities
/// they were drawn with, outcomes and the (z, t) at each decision.
struct OnlineHistory {
  std::size_t dim = 0;
  std::vector<double> x;  // row-major, dim per row
  std::vector<double> y;
  std::vector<int> action;
  std::vector<double> propensity;
  std::vector<double> z;
  std::vector<double> t;

  std::size_t size() const { return y.size(); }
  void append(std::span<const double> xi, int a, double p, double yi, double zi, double ti);
  ObservationalData as_data() const;
};

/// Rewards from the history with the recorded policy probabilities in the
/// doubly robust formula and arm-wise OLS outcome models.
RewardTable online_rewards(const OnlineHistory& history);

struct OnlineDecision {
  int action = 0;
  double probability = 0.5;
  bool updated = false;  // theta was updated before acting
  std::size_t sweeps = 0;
};

/// Decision-time learning at the current state s = (x, z, t): rebuild the
/// sample environment from the history, warm-start TD sweeps from weights
/// until nu settles, update theta once with the TD error of the previous
/// decision (which is the last history row), then draw the action.
/// With fewer than min_history rows the action is a fair coin and nothing is
/// updated. step_index counts decisions from 1 and drives the 1/n schedule.
OnlineDecision online_decision_step(const OnlineHistory& history, const StateView& s, PolicyParams& params,
                                    ValueWeights& weights, const OnlineConfig& config, const EnvConfig& env,
                                    const RateModel& forecast, std::size_t step_index, Rng& rng);

}  // namespace dyntreat
