#pragma once

#include "dyntreat/arrivals.hpp"
#include "dyntreat/data.hpp"
#include "dyntreat/nuisance.hpp"
#include "dyntreat/policy.hpp"
#include "dyntreat/rng.hpp"

#include <json.hpp>

#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dyntreat {

enum class Boundary { dirichlet, periodic, neumann, periodic_neumann };

std::string to_string(Boundary b);
Boundary parse_boundary(std::string_view s);

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Parameters of the simulated planner environment. Budget quantities are in
/// budget units: one treatment drains `cost`; the income flow `income_rate`
/// (plus `interest` * z) accrues per unit of time.
struct EnvConfig {
  Boundary boundary = Boundary::dirichlet;
  double z0 = 1.0;
  double t0 = 0.0;
  double horizon = 1.0;  // T, or kInf
  double z_lower = 0.0;  // or -kInf
  double beta = 0.10536051565782628;  // -log(0.9)
  double b_n = 100.0;
  double cost = 0.04;
  double income_rate = 0.0;
  double income_cos = 0.0;  // seasonal part of the income flow, times cos(2 pi t / period)
  double interest = 0.0;
  double boundary_flow = 0.0;  // reflecting flow at z_lower (Neumann regimes)
  double period = 1.0;
  double max_periods = 20.0;  // episode truncation for periodic regimes
  double lattice_dt = 0.0;    // > 0 replaces exponential interarrival times by this constant

  bool periodic_time() const {
    return boundary == Boundary::periodic || boundary == Boundary::periodic_neumann;
  }
  bool reflecting() const {
    return boundary == Boundary::neumann || boundary == Boundary::periodic_neumann;
  }
  /// Time at which an episode stops: T, or t0 + max_periods * period.
  double time_limit() const;
  /// Income flow rho(z, t) + b z, per unit time.
  double income(double z, double t) const;
  /// Upper bound on the effective-horizon error of periodic truncation, per unit |r_hat|.
  double truncation_error_bound() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

/// Shared read-only inputs of the sample environment.
struct EnvInputs {
  EnvConfig config;
  ObservationalData data;
  RewardTable rewards;
  ClusterAssignment clusters;
  ForecastEnsemble forecasts;
  std::vector<double> row_cost;  // empty: config.cost for every row
  std::vector<std::vector<std::size_t>> rows_by_cluster;

  /// Validates everything and builds the cluster index. With no clusters or
  /// forecasts, a single cluster with constant unit arrival rate is used.
  static std::shared_ptr<const EnvInputs> create(EnvConfig config, ObservationalData data, RewardTable rewards,
                                                 std::optional<ClusterAssignment> clusters = std::nullopt,
                                                 std::optional<ForecastEnsemble> forecasts = std::nullopt,
                                                 std::vector<double> row_cost = {});

  double cost(std::size_t row) const { return row_cost.empty() ? config.cost : row_cost[row]; }
  bool constant_cost() const { return row_cost.empty(); }
  /// Probability that an arrival at time t under forecast f is the given row.
  double row_probability(std::size_t row, double t, std::size_t forecast = 0) const;
};

enum class Compliance { complier = 0, always_taker = 1, never_taker = 2 };

struct State {
  std::size_t row = 0;  // current arrival in the data
  int cluster = 0;
  Compliance compliance = Compliance::complier;
  double z = 0;
  double t = 0;
  double discount = 1;  // e^{-beta (t - t0)}
  std::size_t forecast = 0;
  std::size_t steps = 0;
};

struct Transition {
  State state;  // decision state
  int requested_action = 0;
  int action = 0;     // after feasibility coercion
  bool treated = false;  // treatment delivered (includes always-takers)
  double reward = 0;  // r_hat / b_n, zero unless a complier was treated
  State next;
  double dt = 0;
  bool censored = false;
  bool terminal = false;   // next state outside the domain
  bool truncated = false;  // episode cut at the periodic time cap; next is still in the domain

  bool ends_episode() const { return terminal || truncated; }
};

/// One simulated planner environment. Cheap to copy; all per-worker state
/// lives in the State values and the Rng passed in.
class Environment {
 public:
  explicit Environment(std::shared_ptr<const EnvInputs> inputs);

  const EnvInputs& inputs() const { return *inputs_; }
  const EnvConfig& config() const { return inputs_->config; }
  std::shared_ptr<const EnvInputs> shared_inputs() const { return inputs_; }

  /// Start of an episode at (z0, t0): forecast drawn, first arrival drawn.
  State reset(Rng& rng) const;
  /// Start at an arbitrary in-domain (z, t).
  State reset_at(double z, double t, Rng& rng) const;
  Transition step(const State& s, int action, Rng& rng) const;
  bool is_terminal(const State& s) const;
  bool can_treat(const State& s) const;

  StateView view(const State& s) const { return {inputs_->data.row(s.row), s.z, s.t}; }
  double arrival_rate(const State& s) const;

 private:
  void draw_arrival(State& s, Rng& rng) const;

  std::shared_ptr<const EnvInputs> inputs_;
};

/// Discounted welfare sum_i e^{-beta (t_i - t0)} reward_i over decision times t_i.
double episode_welfare(std::span<const Transition> trajectory, double beta, double t0);

/// CSV with columns t, z, cluster, action, reward, I (one row per decision).
void save_trajectory(const std::filesystem::path& path, std::span<const Transition> trajectory);

}  // namespace dyntreat
