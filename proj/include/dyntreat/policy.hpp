#pragma once

#include "dyntreat/data.hpp"
#include "dyntreat/nuisance.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dyntreat {

/// The part of a state that policies and value functions look at.
struct StateView {
  std::span<const double> x;
  double z = 0;
  double t = 0;
};

enum class FeatureKind { constant, covariate, covariate_z, covariate_cos, covariate_sin, z, cos_t };

struct FeatureTerm {
  FeatureKind kind = FeatureKind::constant;
  std::size_t index = 0;  // covariate index for the covariate_* kinds

  /// Canonical names: "1", "x[j]", "x[j]*z", "x[j]*cos", "x[j]*sin", "z", "cos".
  std::string name() const;
  static FeatureTerm parse(std::string_view name);
  bool operator==(const FeatureTerm&) const = default;
};

/// Ordered feature map f(x, z, t). Time enters through cos(2 pi t) and
/// sin(2 pi t), i.e. one calendar period per unit of t.
class FeatureSpec {
 public:
  FeatureSpec() = default;
  explicit FeatureSpec(std::vector<FeatureTerm> terms);

  /// "static": 1, x. "dynamic": 1, x, x*z, x*cos. "dynamic_full": the dynamic
  /// class with the constant included in the interacted block
  /// (1, x, z, x*z, cos, x*cos).
  static FeatureSpec preset(std::string_view name, std::size_t covariate_dim);
  static FeatureSpec parse(const std::vector<std::string>& names);

  std::size_t dim() const { return terms_.size(); }
  const std::vector<FeatureTerm>& terms() const { return terms_; }
  /// Smallest covariate dimension the spec can be evaluated on.
  std::size_t required_covariates() const;
  /// True when no term depends on z or t.
  bool is_static() const;
  std::vector<std::string> names() const;

  void evaluate(const StateView& s, std::span<double> out) const;
  Eigen::VectorXd evaluate(const StateView& s) const;

 private:
  std::vector<FeatureTerm> terms_;
};

/// Soft-max (logit) treatment policy: pi(1 | s) = logistic(theta' f(s)).
struct PolicyParams {
  FeatureSpec spec;
  Eigen::VectorXd theta;

  static PolicyParams zeros(FeatureSpec spec);
  double index(const StateView& s) const;
  void validate() const;
};

Eigen::VectorXd features(const StateView& s, const FeatureSpec& spec);
double action_prob(const PolicyParams& params, const StateView& s);
/// Score of the logistic policy: (a - pi(1 | s)) f(s).
Eigen::VectorXd log_grad(const PolicyParams& params, const StateView& s, int action);
/// log pi(a | s), overflow safe.
double log_prob(const PolicyParams& params, const StateView& s, int action);

/// Thresholded version of a soft-max policy: treat iff theta' f(s) > 0.
struct DecisionRule {
  PolicyParams params;

  bool treat(const StateView& s) const { return params.index(s) > 0.0; }
  /// e.g. "treat if 0.5 + 1.25*x[0] - 0.1*x[0]*z > 0".
  std::string expression() const;
};

DecisionRule to_deterministic(const PolicyParams& params);

struct EwmOptions {
  std::size_t directions = 100000;
  std::uint64_t seed = 0;
  /// Use OpenMP over directions; the serial path is kept for reference tests.
  bool parallel = true;
};

struct EwmResult {
  PolicyParams params;
  double welfare = 0;        // n^-1 sum r_hat * treat
  double share_treated = 0;  // n^-1 sum treat
  std::size_t directions_searched = 0;
};

/// Empirical welfare maximization over static threshold rules
/// 1{theta0 + theta1' x > 0} subject to a treated-share cap, by exhaustive
/// search over random unit directions with data-induced cut points.
EwmResult ewm_search(const RewardTable& rewards, const ObservationalData& data, double budget_fraction,
                     const FeatureSpec& spec, const EwmOptions& options = {});

void to_json(nlohmann::json& j, const PolicyParams& p);
void from_json(const nlohmann::json& j, PolicyParams& p);

}  // namespace dyntreat
