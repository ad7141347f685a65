#include "dyntreat/synth.hpp"

#include "dyntreat/error.hpp"
#include "dyntreat/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace dyntreat {

double EffectSpec::operator()(std::span<const double> x) const {
  double v = intercept;
  for (std::size_t j = 0; j < linear.size() && j < x.size(); ++j) v += linear[j] * x[j];
  for (std::size_t j = 0; j < absolute.size() && j < x.size(); ++j) v += absolute[j] * std::abs(x[j]);
  return v;
}

void SynthSpec::validate() const {
  auto bad = [](const std::string& m) { throw ValidationError("synth: " + m); };
  if (n < 1) bad("n must be at least 1");
  if (covariate_names.empty()) bad("at least one covariate");
  if (groups.empty()) bad("at least one group");
  const std::size_t d = dim();
  double total = 0;
  for (const auto& g : groups) {
    if (g.mean.size() != d || g.sd.size() != d) bad("group means and sds need one entry per covariate");
    if (!(g.weight >= 0)) bad("group weights must be non-negative");
    for (double s : g.sd)
      if (!(s >= 0)) bad("sds must be non-negative");
    total += g.weight;
  }
  if (!(total > 0)) bad("group weights sum to zero");
  if (effect.linear.size() > d || effect.absolute.size() > d) bad("effect has more coefficients than covariates");
  if (baseline.size() > d) bad("baseline has more coefficients than covariates");
  if (!(noise_sd >= 0)) bad("noise_sd must be non-negative");
  if (!(propensity > 0 && propensity < 1)) bad("propensity must lie in (0, 1)");
  if (!(always_takers >= 0 && never_takers >= 0 && always_takers + never_takers < 1))
    bad("always_takers + never_takers must lie in [0, 1)");
}

SynthSpec SynthSpec::jtpa_like(std::size_t n) {
  SynthSpec s;
  s.n = n;
  s.covariate_names = {"age", "education", "earnings"};
  // Two groups gain from training and arrive in opposite seasons; they sit on
  // opposite sides of the covariate space, so no half-space picks both. The
  // two losing groups are split by education.
  auto group = [](double w, double a, double e, double r, double b1, double b2) {
    SynthGroup g;
    g.weight = w;
    g.mean = {a, e, r};
    g.sd = {0.3, 0.3, 0.3};
    g.arrival = {0.0, b1, b2};
    return g;
  };
  s.groups = {group(0.2, 1.2, 0.0, 0.8, 0.0, 3.0), group(0.2, -1.2, 0.0, -0.8, 0.0, -3.0),
              group(0.3, 0.0, 1.0, 0.0, 1.5, 0.0), group(0.3, 0.0, -1.0, 0.0, -1.5, 0.0)};
  // Outcomes are earnings in dollars.
  s.effect.intercept = -1800.0;
  s.effect.linear = {0.0, 300.0, 0.0};
  s.effect.absolute = {2500.0, 0.0, 0.0};
  s.baseline_intercept = 15000.0;
  s.baseline = {2000.0, 3000.0, 5000.0};
  s.noise_sd = 2000.0;
  return s;
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : s.groups)
    groups.push_back({{"weight", g.weight},
                      {"mean", g.mean},
                      {"sd", g.sd},
                      {"arrival", {g.arrival.b0, g.arrival.b1, g.arrival.b2}}});
  j = nlohmann::json{{"n", s.n},
                     {"covariates", s.covariate_names},
                     {"groups", groups},
                     {"effect", {{"intercept", s.effect.intercept}, {"linear", s.effect.linear}, {"absolute", s.effect.absolute}}},
                     {"baseline_intercept", s.baseline_intercept},
                     {"baseline", s.baseline},
                     {"noise_sd", s.noise_sd},
                     {"propensity", s.propensity},
                     {"always_takers", s.always_takers},
                     {"never_takers", s.never_takers}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name != "jtpa_like") throw ValidationError("synth: unknown preset '" + name + "'");
    s = SynthSpec::jtpa_like(j.value("n", std::size_t{1000}));
  } else {
    s = SynthSpec{};
    s.n = j.at("n").get<std::size_t>();
    s.covariate_names = j.at("covariates").get<std::vector<std::string>>();
    s.groups.clear();
    for (const auto& g : j.at("groups")) {
      SynthGroup sg;
      sg.weight = g.value("weight", 1.0);
      sg.mean = g.at("mean").get<std::vector<double>>();
      sg.sd = g.at("sd").get<std::vector<double>>();
      if (g.contains("arrival")) {
        const auto a = g.at("arrival").get<std::vector<double>>();
        if (a.size() != 3) throw ValidationError("synth: arrival needs three coefficients");
        sg.arrival = {a[0], a[1], a[2]};
      }
      s.groups.push_back(std::move(sg));
    }
    if (j.contains("effect")) {
      const auto& e = j.at("effect");
      s.effect.intercept = e.value("intercept", 0.0);
      s.effect.linear = e.value("linear", std::vector<double>{});
      s.effect.absolute = e.value("absolute", std::vector<double>{});
    }
    s.baseline_intercept = j.value("baseline_intercept", 0.0);
    s.baseline = j.value("baseline", std::vector<double>{});
  }
  s.noise_sd = j.value("noise_sd", s.noise_sd);
  s.propensity = j.value("propensity", s.propensity);
  s.always_takers = j.value("always_takers", s.always_takers);
  s.never_takers = j.value("never_takers", s.never_takers);
  s.validate();
}

namespace {

// Arrival time in [0, 1) with density proportional to exp(b1 sin 2 pi t + b2 cos 2 pi t).
double seasonal_time(const RateCoefficients& c, Rng& rng) {
  const double peak = std::hypot(c.b1, c.b2);
  while (true) {
    const double t = rng.uniform();
    const double a = 2.0 * std::numbers::pi * t;
    if (rng.uniform() < std::exp(c.b1 * std::sin(a) + c.b2 * std::cos(a) - peak)) return t;
  }
}

}  // namespace

SynthOutput synth_data(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::substream(seed, "synth");
  const std::size_t n = spec.n, d = spec.dim();
  std::vector<double> cum;
  double total = 0;
  for (const auto& g : spec.groups) cum.push_back(total += g.weight);

  SynthOutput out;
  auto& data = out.data;
  data.y.resize(static_cast<Eigen::Index>(n));
  data.w.resize(n);
  data.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  data.covariate_names = spec.covariate_names;
  data.arrival_time.emplace(n);
  const bool noncompliance = spec.always_takers > 0 || spec.never_takers > 0;
  if (noncompliance) data.instrument.emplace(n);
  out.truth.tau.resize(n);
  out.truth.group.resize(n);
  out.truth.compliance.assign(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    std::size_t g = 0;
    while (g + 1 < cum.size() && u >= cum[g]) ++g;
    const auto& grp = spec.groups[g];
    const auto ie = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < d; ++j) data.x(ie, static_cast<Eigen::Index>(j)) = grp.mean[j] + grp.sd[j] * rng.normal();
    (*data.arrival_time)[i] = seasonal_time(grp.arrival, rng);
    const double tau = spec.effect(data.row(i));
    int w = rng.bernoulli(spec.propensity) ? 1 : 0;
    if (noncompliance) {
      (*data.instrument)[i] = w;
      const double c = rng.uniform();
      if (c < spec.always_takers) {
        out.truth.compliance[i] = 1;
        w = 1;
      } else if (c < spec.always_takers + spec.never_takers) {
        out.truth.compliance[i] = 2;
        w = 0;
      }
    }
    double y0 = spec.baseline_intercept;
    for (std::size_t j = 0; j < spec.baseline.size(); ++j) y0 += spec.baseline[j] * data.x(ie, static_cast<Eigen::Index>(j));
    data.y[ie] = y0 + w * tau + spec.noise_sd * rng.normal();
    data.w[i] = w;
    out.truth.tau[i] = tau;
    out.truth.group[i] = static_cast<int>(g);
  }
  double s = 0;
  for (double t : out.truth.tau) s += t;
  out.truth.ate = s / static_cast<double>(n);
  data.validate();
  return out;
}

void save_synth(const std::filesystem::path& dir, const SynthOutput& out, const SynthSpec& spec) {
  std::filesystem::create_directories(dir);
  save_dataset(dir / "data.csv", out.data);
  nlohmann::json j{{"spec", spec},
                   {"ate", out.truth.ate},
                   {"tau", out.truth.tau},
                   {"group", out.truth.group},
                   {"compliance", out.truth.compliance}};
  std::ofstream f(dir / "truth.json");
  if (!f) throw IoError("cannot write " + (dir / "truth.json").string());
  f << j.dump(2) << '\n';
}

}  // namespace dyntreat
