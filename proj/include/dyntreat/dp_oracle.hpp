#pragma once

#include "dyntreat/environment.hpp"
#include "dyntreat/policy.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

namespace dyntreat {

/// Integrated value on a (z, t) grid. h(i, j) is the value at z[i], t[j] when
/// an individual arrives there.
struct GridValue {
  Boundary boundary = Boundary::dirichlet;
  std::vector<double> z;
  std::vector<double> t;
  RowMatrix h;
  /// Same recursion with a reward of 1/b_n for every arrival regardless of
  /// action: the discounted expected number of arrivals, scaled by 1/b_n.
  RowMatrix discounted_arrivals;
  Eigen::VectorXd theta;
  double b_n = 0;
  double max_residual = 0;
  std::size_t sweeps = 0;

  /// Bilinear interpolation; periodic in t for periodic regimes.
  double at(double z, double t) const;
};

struct DpOptions {
  /// Number of time cells between t0 and T (Dirichlet) or over one period.
  std::size_t time_steps = 200;
  /// Use the environment's lattice_dt as a deterministic interarrival time.
  /// The time grid step then equals lattice_dt.
  bool deterministic = false;
  /// z grid step as a fraction of the treatment cost.
  std::size_t z_refine = 1;
  double tolerance = 1e-12;
  std::size_t max_sweeps = 100000;
  bool parallel = true;
  /// Which forecast member supplies the arrival rates.
  std::size_t forecast = 0;
  /// Top of the z grid; NaN derives it from the income bounds over the horizon.
  double z_max = std::numeric_limits<double>::quiet_NaN();
};

/// Fixed point of the discretized recursion
///   h(z, t) = r_theta(z, t) / b_n + E[e^{-beta (t' - t)} h(z', t')]
/// with the expectation taken over the censored exponential interarrival time,
/// the empirical (cluster-weighted) covariate law and the policy's actions.
/// Dirichlet: backward induction in t. Periodic: value iteration to the
/// tolerance. Requires a finite z_lower and a constant treatment cost.
GridValue solve_dp_value(const PolicyParams& params, const EnvInputs& inputs, const DpOptions& options = {});

/// Value at the environment's (z0, t0), averaged over the forecast members
/// with their weights.
double dp_value_at_start(const PolicyParams& params, const EnvInputs& inputs, const DpOptions& options = {});

/// Budget-only model with unit arrival rate and cost 1/b_n:
///   h(z) = r_theta(z)/b_n + (1 - beta/b_n) [h(z - 1/b_n) pi(1|z) + h(z) pi(0|z)]
/// solved upward from h(0) = 0 on the grid k / b_n, k = 0..round(z0 b_n).
/// Time features are evaluated at t = 0.
struct OdeValue {
  std::vector<double> z;
  std::vector<double> h;
  double at_start() const { return h.back(); }
};

OdeValue solve_ode_value(const PolicyParams& params, const RewardTable& rewards, const ObservationalData& data,
                         double beta, double b_n, double z0);

/// Small discrete instance for exhaustive enumeration: a handful of covariate
/// types with integer multiplicities, a fixed time lattice and a budget.
struct TinyInstance {
  std::vector<Eigen::VectorXd> x;
  std::vector<double> reward;
  std::vector<int> multiplicity;
  double beta = 0;
  double b_n = 1;
  double cost = 1;
  double z0 = 1;
  double z_lower = 0;
  double t0 = 0;
  double dt = 1;
  std::size_t epochs = 1;

  double probability(std::size_t type) const;
  /// Environment inputs with deterministic interarrival time dt and horizon
  /// t0 + epochs * dt; each type is replicated multiplicity times.
  std::shared_ptr<const EnvInputs> to_env_inputs() const;
};

/// Exact expected welfare of a policy on a tiny instance by enumerating every
/// sequence of arrivals and actions. Throws if the tree exceeds 1e8 branches
/// or the budget allows more than max_treatments treatments.
double brute_force_welfare(const PolicyParams& params, const TinyInstance& instance, std::size_t max_treatments = 12);

/// Central-difference gradient of value(theta) with step eps per coordinate.
Eigen::VectorXd policy_grad_fd(const PolicyParams& params, const std::function<double(const PolicyParams&)>& value,
                               double eps);

void save_grid_value(const std::filesystem::path& path, const GridValue& g);

}  // namespace dyntreat
