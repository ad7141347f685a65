#include "dyntreat/value.hpp"

#include "dyntreat/error.hpp"

#include <charconv>
#include <cmath>
#include <numbers>

namespace dyntreat {

namespace {

const char* factor_name(TimeFactor f) {
  switch (f) {
    case TimeFactor::none: return "";
    case TimeFactor::one_minus_t: return "(1-t)";
    case TimeFactor::sin_pi_t: return "sin(pi t)";
    case TimeFactor::sin_2pi_t: return "sin(2pi t)";
    case TimeFactor::cos_2pi_t: return "cos(2pi t)";
  }
  return "";
}

int parse_power(std::string_view s, std::string_view whole) {
  if (s.empty()) return 1;
  if (s[0] != '^') throw ValidationError("bad basis term '" + std::string(whole) + "'");
  int v = 0;
  auto [p, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 1)
    throw ValidationError("bad basis term '" + std::string(whole) + "'");
  return v;
}

// sin(pi x) with exact zeros at integer x.
double sinpi(double x) {
  double r = std::remainder(x, 2.0);
  if (r > 0.5) r = 1.0 - r;
  else if (r < -0.5) r = -1.0 - r;
  return std::sin(std::numbers::pi * r);
}

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

BasisTerm zt(int zp, TimeFactor f, int tp = 1) { return {zp, f, tp}; }

}  // namespace

std::string BasisTerm::name() const {
  std::string zpart = z_power == 0 ? "" : z_power == 1 ? "z" : "z^" + std::to_string(z_power);
  std::string tpart = factor_name(time);
  if (time != TimeFactor::none && time_power > 1) tpart += "^" + std::to_string(time_power);
  if (zpart.empty() && tpart.empty()) return "1";
  if (zpart.empty()) return tpart;
  if (tpart.empty()) return zpart;
  return zpart + "*" + tpart;
}

BasisTerm BasisTerm::parse(std::string_view name) {
  BasisTerm t{0, TimeFactor::none, 1};
  if (name == "1") return t;
  std::string_view rest = name;
  if (!rest.empty() && rest[0] == 'z') {
    auto star = rest.find('*');
    std::string_view zp = rest.substr(1, star == std::string_view::npos ? std::string_view::npos : star - 1);
    t.z_power = parse_power(zp, name);
    rest = star == std::string_view::npos ? std::string_view{} : rest.substr(star + 1);
  }
  if (rest.empty()) return t;
  for (TimeFactor f : {TimeFactor::one_minus_t, TimeFactor::sin_pi_t, TimeFactor::sin_2pi_t, TimeFactor::cos_2pi_t}) {
    std::string_view fn = factor_name(f);
    if (rest.substr(0, fn.size()) == fn) {
      t.time = f;
      t.time_power = parse_power(rest.substr(fn.size()), name);
      return t;
    }
  }
  throw ValidationError("unknown basis term '" + std::string(name) + "'");
}

double BasisTerm::evaluate(double z, double t) const {
  double g = 1.0;
  switch (time) {
    case TimeFactor::none: break;
    case TimeFactor::one_minus_t: g = 1.0 - t; break;
    case TimeFactor::sin_pi_t: g = sinpi(t); break;
    case TimeFactor::sin_2pi_t: g = sinpi(2.0 * t); break;
    case TimeFactor::cos_2pi_t: g = std::cos(2.0 * std::numbers::pi * t); break;
  }
  if (time != TimeFactor::none) g = ipow(g, time_power);
  return ipow(z, z_power) * g;
}

BasisSpec::BasisSpec(std::vector<BasisTerm> terms) : terms_(std::move(terms)) {
  if (terms_.empty()) throw ValidationError("basis spec needs at least one term");
  for (std::size_t i = 0; i < terms_.size(); ++i)
    for (std::size_t j = i + 1; j < terms_.size(); ++j)
      if (terms_[i] == terms_[j]) throw ValidationError("duplicate basis term '" + terms_[i].name() + "'");
}

BasisSpec BasisSpec::preset(std::string_view name) {
  using F = TimeFactor;
  std::vector<BasisTerm> t = {zt(1, F::one_minus_t),    zt(1, F::one_minus_t, 2), zt(2, F::one_minus_t),
                              zt(2, F::one_minus_t, 2), zt(1, F::sin_pi_t),       zt(1, F::sin_2pi_t),
                              zt(2, F::sin_pi_t),       zt(2, F::sin_2pi_t),      zt(3, F::one_minus_t)};
  if (name == "appendixE9") return BasisSpec(std::move(t));
  t.push_back(zt(3, F::sin_pi_t));
  t.push_back(zt(3, F::sin_2pi_t));
  if (name == "appendixE11") return BasisSpec(std::move(t));
  t.push_back(zt(3, F::one_minus_t, 2));
  t.push_back(zt(4, F::one_minus_t));
  if (name == "appendixE13") return BasisSpec(std::move(t));
  throw ValidationError("unknown basis preset '" + std::string(name) + "'");
}

BasisSpec BasisSpec::parse(const std::vector<std::string>& names) {
  if (names.size() == 1 && names[0].rfind("appendixE", 0) == 0) return preset(names[0]);
  std::vector<BasisTerm> t;
  for (const auto& n : names) t.push_back(BasisTerm::parse(n));
  return BasisSpec(std::move(t));
}

std::vector<std::string> BasisSpec::names() const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.name());
  return out;
}

void BasisSpec::evaluate(double z, double t, std::span<double> out) const {
  for (std::size_t k = 0; k < terms_.size(); ++k) out[k] = terms_[k].evaluate(z, t);
}

ValueWeights ValueWeights::zeros(BasisSpec spec) {
  ValueWeights w;
  w.nu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dim()));
  w.spec = std::move(spec);
  return w;
}

Eigen::VectorXd basis(double z, double t, const BasisSpec& spec) {
  Eigen::VectorXd phi(static_cast<Eigen::Index>(spec.dim()));
  spec.evaluate(z, t, std::span<double>(phi.data(), spec.dim()));
  return phi;
}

double predict(const ValueWeights& weights, double z, double t) {
  double v = 0;
  const auto& terms = weights.spec.terms();
  for (std::size_t k = 0; k < terms.size(); ++k) v += weights.nu[static_cast<Eigen::Index>(k)] * terms[k].evaluate(z, t);
  return v;
}

double td_error(double reward, double beta, double dt, bool next_in_domain, const ValueWeights& weights, double z,
                double t, double z_next, double t_next) {
  const double boot = next_in_domain ? std::exp(-beta * dt) * predict(weights, z_next, t_next) : 0.0;
  return reward + boot - predict(weights, z, t);
}

void td_update(ValueWeights& weights, double delta, std::span<const double> phi, double alpha) {
  for (std::size_t k = 0; k < phi.size(); ++k) weights.nu[static_cast<Eigen::Index>(k)] += alpha * delta * phi[k];
}

double rule_of_thumb_alpha_v(std::span<const Eigen::VectorXd> phis) {
  if (phis.empty()) throw ValidationError("rule_of_thumb_alpha_v: empty sample");
  double s = 0;
  for (const auto& p : phis) s += p.norm();
  const double mean = s / static_cast<double>(phis.size());
  if (!(mean > 0)) throw ValidationError("rule_of_thumb_alpha_v: all basis vectors are zero");
  return 0.1 / mean;
}

void to_json(nlohmann::json& j, const ValueWeights& w) {
  j = nlohmann::json::object();
  j["basis_spec"] = w.spec.names();
  j["nu"] = std::vector<double>(w.nu.data(), w.nu.data() + w.nu.size());
}

void from_json(const nlohmann::json& j, ValueWeights& w) {
  w.spec = BasisSpec::parse(j.at("basis_spec").get<std::vector<std::string>>());
  auto nu = j.at("nu").get<std::vector<double>>();
  if (nu.size() != w.spec.dim()) throw ValidationError("value weights: nu length does not match basis");
  w.nu = Eigen::Map<Eigen::VectorXd>(nu.data(), static_cast<Eigen::Index>(nu.size()));
}

}  // namespace dyntreat
