#include "support.hpp"

#include "dyntreat/error.hpp"
#include "dyntreat/policy.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace dyntreat;

namespace {

PolicyParams random_params(const FeatureSpec& spec, Rng& rng, double scale) {
  PolicyParams p = PolicyParams::zeros(spec);
  for (Eigen::Index j = 0; j < p.theta.size(); ++j) p.theta[j] = scale * rng.normal();
  return p;
}

struct RandomState {
  std::vector<double> x;
  double z, t;
  StateView view() const { return {x, z, t}; }
};

RandomState random_state(std::size_t d, Rng& rng) {
  RandomState s{std::vector<double>(d), rng.uniform(), rng.uniform()};
  for (auto& v : s.x) v = rng.normal();
  return s;
}

ObservationalData one_covariate(const std::vector<double>& x) {
  ObservationalData d;
  d.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(x.size()));
  d.w.assign(x.size(), 0);
  d.x.resize(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) d.x(static_cast<Eigen::Index>(i), 0) = x[i];
  d.covariate_names = {"x0"};
  return d;
}

bool treats(const PolicyParams& p, std::span<const double> x) { return p.index({x, 0, 0}) > 0; }

}  // namespace

TEST_CASE("feature evaluation") {
  const std::vector<double> x = {2.0, -1.0};
  const StateView s{x, 0.5, 0.25};
  CHECK(features(s, FeatureSpec::parse({"1"})) == Eigen::VectorXd::Ones(1));
  const auto f = features(s, FeatureSpec::parse({"1", "x[0]*z"}));
  CHECK(f[0] == 1.0);
  CHECK(f[1] == 1.0);
  const auto g = features(s, FeatureSpec::parse({"x[1]*cos", "x[0]*sin", "z", "cos", "x[1]"}));
  CHECK(std::abs(g[0]) < 1e-15);  // cos(pi / 2)
  CHECK(g[1] == doctest::Approx(2.0));
  CHECK(g[2] == 0.5);
  CHECK(g[4] == -1.0);
}

TEST_CASE("feature presets and names") {
  CHECK(FeatureSpec::preset("dynamic", 3).dim() == 10);
  CHECK(FeatureSpec::preset("static", 3).dim() == 4);
  CHECK(FeatureSpec::preset("static", 3).is_static());
  CHECK_FALSE(FeatureSpec::preset("dynamic", 3).is_static());
  const auto spec = FeatureSpec::preset("dynamic_full", 2);
  CHECK(FeatureSpec::parse(spec.names()).terms() == spec.terms());
  CHECK(spec.required_covariates() == 2);
  CHECK_THROWS_AS(FeatureSpec::preset("nonsense", 2), ValidationError);
  CHECK_THROWS_AS(FeatureSpec::parse({"1", "1"}), ValidationError);
  CHECK_THROWS_AS(FeatureSpec::parse({"x[0]^2"}), ValidationError);

  const std::vector<double> x = {1.0};
  CHECK_THROWS_AS(features({x, 0, 0}, FeatureSpec::preset("static", 2)), ValidationError);
}

TEST_CASE("action probability") {
  const auto spec = FeatureSpec::parse({"1"});
  PolicyParams p = PolicyParams::zeros(spec);
  const std::vector<double> x;
  const StateView s{x, 0, 0};
  CHECK(action_prob(p, s) == 0.5);
  p.theta[0] = 50;
  CHECK(action_prob(p, s) >= 1 - 1e-20);
  CHECK(action_prob(p, s) <= 1.0);
  CHECK(std::isfinite(log_prob(p, s, 0)));
  p.theta[0] = -800;
  CHECK(action_prob(p, s) >= 0.0);
  CHECK(std::isfinite(log_prob(p, s, 1)));
  CHECK(log_prob(p, s, 1) == doctest::Approx(-800));
  p.theta[0] = std::log(3.0);
  CHECK(action_prob(p, s) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("score of the logistic policy") {
  const auto spec = FeatureSpec::preset("dynamic", 2);
  Rng rng(1);
  const auto st = random_state(2, rng);
  const auto f = features(st.view(), spec);
  CHECK((log_grad(PolicyParams::zeros(spec), st.view(), 1) - 0.5 * f).norm() == 0.0);
  PolicyParams sat = PolicyParams::zeros(spec);
  sat.theta[0] = 60;
  CHECK(log_grad(sat, st.view(), 1).norm() < 1e-20);
}

TEST_CASE("property: score matches finite differences") {
  Rng rng(2);
  const auto spec = FeatureSpec::preset("dynamic_full", 3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_params(spec, rng, 0.5);
    const auto st = random_state(3, rng);
    const int a = static_cast<int>(rng.index(2));
    const auto g = log_grad(p, st.view(), a);
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      PolicyParams hi = p, lo = p;
      hi.theta[j] += 1e-6;
      lo.theta[j] -= 1e-6;
      const double fd = (log_prob(hi, st.view(), a) - log_prob(lo, st.view(), a)) / 2e-6;
      CHECK(std::abs(fd - g[j]) <= 1e-4 * std::max(1.0, std::abs(g[j])));
    }
  }
}

TEST_CASE("property: probability is monotone in the index") {
  const auto spec = FeatureSpec::parse({"1"});
  const std::vector<double> x;
  double last = 0;
  for (int k = -400; k <= 400; ++k) {
    PolicyParams p = PolicyParams::zeros(spec);
    p.theta[0] = k / 10.0;
    const double v = action_prob(p, {x, 0, 0});
    CHECK(v >= last);
    last = v;
  }
}

TEST_CASE("thresholded rule") {
  const auto spec = FeatureSpec::parse({"1"});
  PolicyParams p = PolicyParams::zeros(spec);
  const std::vector<double> x;
  p.theta[0] = 0.1;
  CHECK(to_deterministic(p).treat({x, 0, 0}));
  p.theta[0] = 0.0;
  CHECK_FALSE(to_deterministic(p).treat({x, 0, 0}));

  PolicyParams q = PolicyParams::zeros(FeatureSpec::parse({"1", "x[0]", "x[0]*z"}));
  q.theta << 0.5, 1.25, -0.1;
  CHECK(to_deterministic(q).expression() == "treat if 0.5 + 1.25*x[0] - 0.1*x[0]*z > 0");
}

TEST_CASE("property: thresholded rule ignores positive rescaling") {
  Rng rng(3);
  const auto spec = FeatureSpec::preset("dynamic", 3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_params(spec, rng, 1.0);
    PolicyParams big = p;
    big.theta *= 10.0;
    for (int k = 0; k < 20; ++k) {
      const auto st = random_state(3, rng);
      CHECK(to_deterministic(p).treat(st.view()) == to_deterministic(big).treat(st.view()));
    }
  }
}

TEST_CASE("params json round trip and validation") {
  Rng rng(4);
  const auto p = random_params(FeatureSpec::preset("dynamic", 2), rng, 1.0);
  nlohmann::json j = p;
  const auto back = j.get<PolicyParams>();
  CHECK(back.theta == p.theta);
  CHECK(back.spec.names() == p.spec.names());
  PolicyParams bad = p;
  bad.theta[0] = std::nan("");
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("ewm dominance cases") {
  Rng rng(5);
  std::vector<double> x(40);
  for (auto& v : x) v = rng.normal();
  const auto data = one_covariate(x);
  const auto spec = FeatureSpec::preset("static", 1);
  EwmOptions o;
  o.directions = 200;

  const auto neg = ewm_search(testing::reward_table(-Eigen::VectorXd::Ones(40)), data, 0.5, spec, o);
  CHECK(neg.welfare == 0.0);
  CHECK(neg.share_treated == 0.0);

  const auto pos = ewm_search(testing::reward_table(Eigen::VectorXd::Ones(40)), data, 1.0, spec, o);
  CHECK(pos.share_treated == 1.0);
  CHECK(pos.welfare == doctest::Approx(1.0));

  const auto tiny = ewm_search(testing::reward_table(Eigen::VectorXd::Ones(40)), data, 0.01, spec, o);
  CHECK(tiny.share_treated == 0.0);
}

TEST_CASE("ewm picks the top quarter when rewards increase in x") {
  Rng rng(6);
  std::vector<double> x(101);
  for (auto& v : x) v = rng.normal();
  Eigen::VectorXd r(101);
  for (int i = 0; i < 101; ++i) r[i] = 5.0 + x[static_cast<std::size_t>(i)];
  const auto data = one_covariate(x);
  EwmOptions o;
  o.directions = 500;
  const auto res = ewm_search(testing::reward_table(r), data, 0.25, FeatureSpec::preset("static", 1), o);

  // oracle: best of all n upper-tail threshold rules under the cap
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t cap = 25;  // floor(0.25 * 101)
  double best = 0;
  for (std::size_t k = 0; k <= cap; ++k) {
    double w = 0;
    for (std::size_t i = 0; i < k; ++i) w += 5.0 + sorted[i];
    best = std::max(best, w / 101.0);
  }
  CHECK(res.welfare == doctest::Approx(best).epsilon(1e-12));
  std::size_t treated = 0;
  for (std::size_t i = 0; i < x.size(); ++i) treated += treats(res.params, data.row(i));
  CHECK(treated >= cap - 1);
  CHECK(treated <= cap);
  CHECK(res.share_treated <= 0.25);
}

TEST_CASE("property: ewm dominates treat-nobody and random rules") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto data = testing::gaussian_data(120, 2, rng);
    const auto rewards = testing::true_rewards(data);
    const double budget = 0.1 + 0.8 * rng.uniform();
    EwmOptions o;
    o.directions = 300;
    o.seed = seed;
    const auto res = ewm_search(rewards, data, budget, FeatureSpec::preset("static", 2), o);
    CHECK(res.welfare >= 0.0);
    CHECK(res.share_treated <= budget + 1e-12);
    // a random rule treating a budget share has expected welfare budget * mean(r)
    CHECK(res.welfare >= budget * rewards.r_hat.mean() - 1e-12);
    std::size_t treated = 0;
    double w = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (treats(res.params, data.row(i))) {
        ++treated;
        w += rewards.r_hat[static_cast<Eigen::Index>(i)];
      }
    CHECK(res.welfare == doctest::Approx(w / 120.0).epsilon(1e-12));
    CHECK(res.share_treated == treated / 120.0);
  }
}

TEST_CASE("ewm parallel and serial searches agree bitwise") {
  Rng rng(7);
  const auto data = testing::gaussian_data(300, 3, rng);
  const auto rewards = testing::true_rewards(data);
  EwmOptions par, ser;
  par.directions = ser.directions = 2000;
  par.seed = ser.seed = 11;
  ser.parallel = false;
  const auto a = ewm_search(rewards, data, 0.3, FeatureSpec::preset("static", 3), par);
  const auto b = ewm_search(rewards, data, 0.3, FeatureSpec::preset("static", 3), ser);
  CHECK(a.params.theta == b.params.theta);
  CHECK(a.welfare == b.welfare);
  CHECK(a.share_treated == b.share_treated);
  CHECK(a.directions_searched == b.directions_searched);
}
