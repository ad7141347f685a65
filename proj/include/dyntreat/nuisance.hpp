#pragma once

#include "dyntreat/data.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace dyntreat {

/// Propensity predictions are clamped into [kPropensityClamp, 1 - kPropensityClamp].
inline constexpr double kPropensityClamp = 0.01;
/// Penalty used when a least-squares design is rank deficient.
inline constexpr double kRidgeFallback = 1e-6;

/// Linear model in [1, x]; coef(0) is the intercept.
struct LinearFit {
  Eigen::VectorXd coef;
  bool ridge_fallback = false;

  double predict(std::span<const double> x) const;
};

/// Least squares of y on [1, design]. Rank-deficient designs fall back to a
/// ridge solve with kRidgeFallback and set the flag.
LinearFit fit_ols(const RowMatrix& design, const Eigen::VectorXd& y);
/// Logistic regression of a 0/1 response on [1, design] by Newton-Raphson,
/// lightly penalized so separable data still yields finite coefficients.
LinearFit fit_logit(const RowMatrix& design, const Eigen::VectorXd& y);

double logistic(double v);

enum class PropensityMode { fixed, estimated };

struct PropensitySpec {
  PropensityMode mode = PropensityMode::estimated;
  double p = 0.5;  // used in fixed mode

  static PropensitySpec fixed(double p) { return {PropensityMode::fixed, p}; }
  static PropensitySpec estimated() { return {PropensityMode::estimated, 0.5}; }
};

/// Deterministic balanced fold labels in [0, folds) from a seeded shuffle.
std::vector<int> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed);

/// Cross-fitted outcome and propensity models. Entry k of each vector was
/// trained on every row outside fold k.
struct NuisanceModels {
  std::size_t folds = 0;
  std::vector<int> fold_of_row;
  std::vector<LinearFit> mu0;
  std::vector<LinearFit> mu1;
  PropensitySpec propensity;
  std::vector<LinearFit> propensity_fit;  // empty in fixed mode
  bool ridge_fallback_used = false;

  /// Out-of-fold prediction of E[Y | X = x_row, W = arm].
  double mu(int arm, std::size_t row, const ObservationalData& data) const;
  /// Out-of-fold propensity, clamped.
  double propensity_at(std::size_t row, const ObservationalData& data) const;
};

NuisanceModels fit_nuisance(const ObservationalData& data, std::size_t folds, PropensitySpec propensity,
                            std::uint64_t seed);

/// Per-row reward estimates r_hat(X_i, 1); r_hat(x, 0) is identically zero and
/// is never stored. Compliance columns are present only for instrumented data.
struct RewardTable {
  Eigen::VectorXd r_hat;
  std::optional<Eigen::VectorXd> q_c;
  std::optional<Eigen::VectorXd> q_a;
  std::optional<Eigen::VectorXd> q_n;
  std::optional<Eigen::VectorXd> late;
  bool degenerate_compliance = false;

  std::size_t size() const { return static_cast<std::size_t>(r_hat.size()); }
  bool has_compliance() const { return q_c.has_value(); }
  void validate() const;
};

/// AIPW score: mu1 - mu0 + (2W - 1)(Y - mu_W) / (W p + (1 - W)(1 - p)).
double aipw_score(double y, int w, double mu0, double mu1, double p);

RewardTable doubly_robust_rewards(const ObservationalData& data, const NuisanceModels& nuisance);

/// Adds compliance shares (q_c, q_a, q_n) and per-row LATE scores to `base`.
/// Requires an instrument column. If no compliers are detected the rewards are
/// zeroed and degenerate_compliance is set.
RewardTable estimate_compliance(const ObservationalData& data, RewardTable base, std::size_t folds,
                                std::uint64_t seed);

void save_reward_table(const std::filesystem::path& path, const RewardTable& table);
RewardTable load_reward_table(const std::filesystem::path& path);

}  // namespace dyntreat
