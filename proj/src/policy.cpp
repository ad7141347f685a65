#include "dyntreat/policy.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

namespace dyntreat {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

std::size_t parse_index(std::string_view s, std::string_view whole) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError("bad feature term '" + std::string(whole) + "'");
  return v;
}

}  // namespace

std::string FeatureTerm::name() const {
  const std::string x = "x[" + std::to_string(index) + "]";
  switch (kind) {
    case FeatureKind::constant: return "1";
    case FeatureKind::covariate: return x;
    case FeatureKind::covariate_z: return x + "*z";
    case FeatureKind::covariate_cos: return x + "*cos";
    case FeatureKind::covariate_sin: return x + "*sin";
    case FeatureKind::z: return "z";
    case FeatureKind::cos_t: return "cos";
  }
  return "?";
}

FeatureTerm FeatureTerm::parse(std::string_view name) {
  if (name == "1") return {FeatureKind::constant, 0};
  if (name == "z") return {FeatureKind::z, 0};
  if (name == "cos") return {FeatureKind::cos_t, 0};
  if (name.substr(0, 2) != "x[") throw ValidationError("unknown feature term '" + std::string(name) + "'");
  const auto close = name.find(']');
  if (close == std::string_view::npos) throw ValidationError("bad feature term '" + std::string(name) + "'");
  const std::size_t idx = parse_index(name.substr(2, close - 2), name);
  const std::string_view rest = name.substr(close + 1);
  if (rest.empty()) return {FeatureKind::covariate, idx};
  if (rest == "*z") return {FeatureKind::covariate_z, idx};
  if (rest == "*cos") return {FeatureKind::covariate_cos, idx};
  if (rest == "*sin") return {FeatureKind::covariate_sin, idx};
  throw ValidationError("unknown feature term '" + std::string(name) + "'");
}

FeatureSpec::FeatureSpec(std::vector<FeatureTerm> terms) : terms_(std::move(terms)) {
  if (terms_.empty()) throw ValidationError("feature spec needs at least one term");
  for (std::size_t i = 0; i < terms_.size(); ++i)
    for (std::size_t j = i + 1; j < terms_.size(); ++j)
      if (terms_[i] == terms_[j]) throw ValidationError("duplicate feature term '" + terms_[i].name() + "'");
}

FeatureSpec FeatureSpec::preset(std::string_view name, std::size_t d) {
  std::vector<FeatureTerm> t;
  auto block = [&](FeatureKind k) {
    for (std::size_t j = 0; j < d; ++j) t.push_back({k, j});
  };
  t.push_back({FeatureKind::constant, 0});
  block(FeatureKind::covariate);
  if (name == "static") {
  } else if (name == "dynamic") {
    block(FeatureKind::covariate_z);
    block(FeatureKind::covariate_cos);
  } else if (name == "dynamic_full") {
    t.push_back({FeatureKind::z, 0});
    block(FeatureKind::covariate_z);
    t.push_back({FeatureKind::cos_t, 0});
    block(FeatureKind::covariate_cos);
  } else {
    throw ValidationError("unknown feature preset '" + std::string(name) + "'");
  }
  return FeatureSpec(std::move(t));
}

FeatureSpec FeatureSpec::parse(const std::vector<std::string>& names) {
  std::vector<FeatureTerm> t;
  for (const auto& n : names) t.push_back(FeatureTerm::parse(n));
  return FeatureSpec(std::move(t));
}

std::size_t FeatureSpec::required_covariates() const {
  std::size_t r = 0;
  for (const auto& t : terms_)
    if (t.kind != FeatureKind::constant && t.kind != FeatureKind::z && t.kind != FeatureKind::cos_t) r = std::max(r, t.index + 1);
  return r;
}

bool FeatureSpec::is_static() const {
  return std::all_of(terms_.begin(), terms_.end(), [](const FeatureTerm& t) {
    return t.kind == FeatureKind::constant || t.kind == FeatureKind::covariate;
  });
}

std::vector<std::string> FeatureSpec::names() const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.name());
  return out;
}

void FeatureSpec::evaluate(const StateView& s, std::span<double> out) const {
  if (s.x.size() < required_covariates())
    throw ValidationError("features: state has " + std::to_string(s.x.size()) + " covariates, spec needs " +
                          std::to_string(required_covariates()));
  bool need_trig = false;
  for (const auto& t : terms_)
    need_trig = need_trig || t.kind == FeatureKind::covariate_cos || t.kind == FeatureKind::covariate_sin ||
                t.kind == FeatureKind::cos_t;
  const double c = need_trig ? std::cos(kTwoPi * s.t) : 0.0;
  const double sn = need_trig ? std::sin(kTwoPi * s.t) : 0.0;
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto& t = terms_[k];
    switch (t.kind) {
      case FeatureKind::constant: out[k] = 1.0; break;
      case FeatureKind::covariate: out[k] = s.x[t.index]; break;
      case FeatureKind::covariate_z: out[k] = s.x[t.index] * s.z; break;
      case FeatureKind::covariate_cos: out[k] = s.x[t.index] * c; break;
      case FeatureKind::covariate_sin: out[k] = s.x[t.index] * sn; break;
      case FeatureKind::z: out[k] = s.z; break;
      case FeatureKind::cos_t: out[k] = c; break;
    }
  }
}

Eigen::VectorXd FeatureSpec::evaluate(const StateView& s) const {
  Eigen::VectorXd f(static_cast<Eigen::Index>(dim()));
  evaluate(s, std::span<double>(f.data(), dim()));
  return f;
}

PolicyParams PolicyParams::zeros(FeatureSpec spec) {
  PolicyParams p;
  p.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dim()));
  p.spec = std::move(spec);
  return p;
}

double PolicyParams::index(const StateView& s) const {
  double buf[64];
  const std::size_t k = spec.dim();
  if (k <= 64) {
    spec.evaluate(s, std::span<double>(buf, k));
    double v = 0;
    for (std::size_t j = 0; j < k; ++j) v += theta[static_cast<Eigen::Index>(j)] * buf[j];
    return v;
  }
  return theta.dot(spec.evaluate(s));
}

void PolicyParams::validate() const {
  if (static_cast<std::size_t>(theta.size()) != spec.dim())
    throw ValidationError("policy: theta has " + std::to_string(theta.size()) + " entries, spec has " +
                          std::to_string(spec.dim()) + " terms");
  if (!theta.allFinite()) throw ValidationError("policy: theta is not finite");
}

Eigen::VectorXd features(const StateView& s, const FeatureSpec& spec) { return spec.evaluate(s); }

double action_prob(const PolicyParams& params, const StateView& s) { return logistic(params.index(s)); }

Eigen::VectorXd log_grad(const PolicyParams& params, const StateView& s, int action) {
  Eigen::VectorXd f = params.spec.evaluate(s);
  const double p = logistic(params.theta.dot(f));
  return (static_cast<double>(action) - p) * f;
}

double log_prob(const PolicyParams& params, const StateView& s, int action) {
  const double v = params.index(s);
  return action == 1 ? -softplus(-v) : -softplus(v);
}

std::string DecisionRule::expression() const {
  std::string out = "treat if ";
  const auto names = params.spec.names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    double c = params.theta[static_cast<Eigen::Index>(k)];
    if (k > 0) {
      out += c < 0 ? " - " : " + ";
      c = std::abs(c);
    }
    out += csv::format(c);
    if (names[k] != "1") out += "*" + names[k];
  }
  return out + " > 0";
}

DecisionRule to_deterministic(const PolicyParams& params) {
  params.validate();
  return DecisionRule{params};
}

void to_json(nlohmann::json& j, const PolicyParams& p) {
  j = nlohmann::json::object();
  j["feature_spec"] = p.spec.names();
  j["theta"] = std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size());
}

void from_json(const nlohmann::json& j, PolicyParams& p) {
  p.spec = FeatureSpec::parse(j.at("feature_spec").get<std::vector<std::string>>());
  auto th = j.at("theta").get<std::vector<double>>();
  p.theta = Eigen::Map<Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size()));
  p.validate();
}

}  // namespace dyntreat
