#pragma once

#include "dyntreat/data.hpp"
#include "dyntreat/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace dyntreat {

/// k-median partition of the covariates. Labels are 0-based.
struct ClusterAssignment {
  std::size_t k = 0;
  std::vector<int> label;
  std::vector<Eigen::VectorXd> medians;
  /// Sum of L1 distances to the assigned median, recorded after every update.
  std::vector<double> objective_history;

  std::vector<std::vector<std::size_t>> members() const;
  static ClusterAssignment single(std::size_t n, const RowMatrix& x);
};

/// Lloyd-style k-median under L1: alternate nearest-median assignment and
/// coordinate-wise median updates until labels stabilize or max_iter sweeps.
/// Seeding is k-means++ style with L1 distances.
ClusterAssignment cluster_covariates(const RowMatrix& x, std::size_t k, std::uint64_t seed,
                                     std::size_t max_iter = 100);
double kmedian_objective(const RowMatrix& x, const ClusterAssignment& a);

/// lambda_c(t) = exp(b0 + b1 sin(2 pi t / P) + b2 cos(2 pi t / P)).
struct RateCoefficients {
  double b0 = 0;
  double b1 = 0;
  double b2 = 0;

  double at(double t, double period = 1.0) const;
};

struct RateModel {
  std::vector<RateCoefficients> clusters;
  double period = 1.0;
  /// Aggregate intensity at the reference time before rescaling; b0 of every
  /// cluster has had log(normalization) subtracted.
  double normalization = 1.0;

  std::size_t size() const { return clusters.size(); }
  double cluster_rate(std::size_t c, double t) const { return clusters[c].at(t, period); }
  /// Writes lambda_c(t) / lambda(t) for every cluster into out.
  void cluster_probabilities(double t, std::span<double> out) const;
  /// min over a 1000-point grid of the aggregate rate on one period.
  double min_aggregate_rate() const;

  static RateModel constant(std::size_t clusters = 1);
};

/// Sum over clusters of lambda_c(t mod period).
double aggregate_rate(const RateModel& model, double t);

/// Mean of aggregate_rate over one period by midpoint quadrature.
double integrated_rate(const RateModel& model, std::size_t nodes = 10000);

struct PoissonFitOptions {
  std::size_t bins = 365;
  /// Intensity multiplier in the likelihood; <= 0 means "number of arrivals".
  double exposure = 0.0;
  std::size_t max_iter = 200;
  double gradient_tol = 1e-8;
  /// Rescale so that the aggregate rate equals 1 at reference_time.
  bool normalize = true;
  double reference_time = 0.0;
  double period = 1.0;
};

struct PoissonFitReport {
  std::vector<double> gradient_norm;
  std::vector<std::size_t> iterations;
};

/// Per-cluster maximum likelihood of the seasonal log-linear intensity on a
/// binned (piecewise-constant) likelihood, by damped Newton iterations.
/// Gradient norms are per arrival (log-likelihood divided by the cluster's
/// arrival count). Throws Error when a cluster fails to converge.
RateModel fit_poisson_rates(const ClusterAssignment& assignment, std::span<const double> arrival_times,
                            const PoissonFitOptions& options = {}, PoissonFitReport* report = nullptr);

struct ArrivalDraw {
  double dt = 0;
  int cluster = 0;
  bool censored = false;
};

/// dt = min(omega / b_n, horizon - t) with omega ~ Exponential(lambda(t)).
/// horizon may be +infinity.
double sample_interarrival(const RateModel& model, double t, double b_n, double horizon, Rng& rng,
                           bool* censored = nullptr);
/// Cluster index with probability lambda_c(t) / lambda(t).
int sample_cluster(const RateModel& model, double t, Rng& rng);
/// Interarrival time and cluster, both evaluated at the pre-jump time t.
ArrivalDraw sample_arrival(const RateModel& model, double t, double b_n, double horizon, Rng& rng);

/// w_t(c) = lambda_c(t) / sum_j lambda_j(t); the weights used to draw which
/// data cluster the next covariate comes from.
std::vector<double> covariate_weights(const RateModel& model, const ClusterAssignment& assignment, double t);

/// Weighted collection of arrival-rate forecasts.
struct ForecastEnsemble {
  std::vector<RateModel> members;
  std::vector<double> weights;

  static ForecastEnsemble single(RateModel model);
  /// Checks non-emptiness and non-negative weights, then rescales weights to sum 1.
  void normalize();
};

/// Index of a member drawn with its weight.
std::size_t draw_forecast(const ForecastEnsemble& ensemble, Rng& rng);

void to_json(nlohmann::json& j, const RateModel& m);
void from_json(const nlohmann::json& j, RateModel& m);
void save_rate_model(const std::filesystem::path& path, const RateModel& m);
RateModel load_rate_model(const std::filesystem::path& path);
void save_clusters(const std::filesystem::path& path, const ClusterAssignment& a);
/// Reads labels; medians are recomputed from x.
ClusterAssignment load_clusters(const std::filesystem::path& path, const RowMatrix& x);

}  // namespace dyntreat
