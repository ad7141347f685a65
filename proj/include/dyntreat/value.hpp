#pragma once

#include "dyntreat/policy.hpp"

#include <json.hpp>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dyntreat {

enum class TimeFactor { none, one_minus_t, sin_pi_t, sin_2pi_t, cos_2pi_t };

/// z^z_power * g(t)^time_power for one of the time factors above.
struct BasisTerm {
  int z_power = 0;
  TimeFactor time = TimeFactor::none;
  int time_power = 1;

  /// e.g. "z^2*(1-t)^2", "z*sin(pi t)", "1".
  std::string name() const;
  static BasisTerm parse(std::string_view name);
  double evaluate(double z, double t) const;
  bool operator==(const BasisTerm&) const = default;
};

class BasisSpec {
 public:
  BasisSpec() = default;
  explicit BasisSpec(std::vector<BasisTerm> terms);

  /// "appendixE9", "appendixE11", "appendixE13". Every preset term vanishes
  /// at z = 0 and at t = 1.
  static BasisSpec preset(std::string_view name);
  static BasisSpec parse(const std::vector<std::string>& names);

  std::size_t dim() const { return terms_.size(); }
  const std::vector<BasisTerm>& terms() const { return terms_; }
  std::vector<std::string> names() const;
  void evaluate(double z, double t, std::span<double> out) const;

 private:
  std::vector<BasisTerm> terms_;
};

/// Linear approximation h(z, t) ~ nu' phi(z, t).
struct ValueWeights {
  BasisSpec spec;
  Eigen::VectorXd nu;

  static ValueWeights zeros(BasisSpec spec);
};

Eigen::VectorXd basis(double z, double t, const BasisSpec& spec);
double predict(const ValueWeights& weights, double z, double t);

/// delta = R + 1{next in domain} e^{-beta dt} h(z', t') - h(z, t).
double td_error(double reward, double beta, double dt, bool next_in_domain, const ValueWeights& weights,
                double z, double t, double z_next, double t_next);

/// nu += alpha * delta * phi.
void td_update(ValueWeights& weights, double delta, std::span<const double> phi, double alpha);

/// 0.1 / mean ||phi|| over the sampled basis vectors.
double rule_of_thumb_alpha_v(std::span<const Eigen::VectorXd> phis);

void to_json(nlohmann::json& j, const ValueWeights& w);
void from_json(const nlohmann::json& j, ValueWeights& w);

}  // namespace dyntreat
