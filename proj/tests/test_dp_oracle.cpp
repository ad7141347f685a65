#include "support.hpp"

#include "dyntreat/dp_oracle.hpp"
#include "dyntreat/error.hpp"
#include "dyntreat/evaluation.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace dyntreat;

namespace {

ObservationalData two_rows(double x0, double x1) {
  ObservationalData d;
  d.y = Eigen::VectorXd::Zero(2);
  d.w = {0, 1};
  d.x.resize(2, 1);
  d.x << x0, x1;
  d.covariate_names = {"x0"};
  return d;
}

PolicyParams threshold(double c0, double c1) {
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("static", 1));
  p.theta << c0, c1;
  return p;
}

TinyInstance tiny(std::size_t epochs, double z0) {
  TinyInstance in;
  in.x = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -1.0)};
  in.reward = {1.0, -0.4};
  in.multiplicity = {2, 1};
  in.beta = 0.2;
  in.b_n = 3;
  in.cost = 0.25;
  in.z0 = z0;
  in.dt = 0.1;
  in.epochs = epochs;
  return in;
}

// Stochastic-time instance for the grid solver.
std::shared_ptr<const EnvInputs> grid_inputs(const Eigen::VectorXd& r, double b_n, double z0, std::uint64_t seed) {
  Rng rng(seed);
  auto data = testing::gaussian_data(static_cast<std::size_t>(r.size()), 2, rng);
  EnvConfig c;
  c.b_n = b_n;
  c.cost = 1.0 / b_n;
  c.z0 = z0;
  c.beta = 0.3;
  return EnvInputs::create(c, std::move(data), testing::reward_table(r));
}

Eigen::VectorXd random_rewards(std::size_t n, Rng& rng, double shift) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(n));
  for (auto& v : r) v = shift + rng.normal();
  return r;
}

std::size_t index_of(const std::vector<double>& grid, double v) {
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i] - v) < 1e-9) return i;
  FAIL("value not on the grid");
  return 0;
}

}  // namespace

TEST_CASE("budget-only recursion with null rewards is zero") {
  const auto data = two_rows(1, -1);
  const auto h = solve_ode_value(threshold(0.3, 1), testing::reward_table(Eigen::VectorXd::Zero(2)), data, 0.1, 100, 0.05);
  for (double v : h.h) CHECK(v == 0.0);
  CHECK(h.z.front() == 0.0);
  CHECK(h.h.front() == 0.0);
  CHECK(h.z.size() == 6);
}

TEST_CASE("budget-only recursion matches a hand recursion") {
  const auto data = two_rows(1, -1);
  const double beta = 0.1, b_n = 100, g = 1 - beta / b_n;

  // treat everyone: rewards 1 and -1 cancel
  const auto all = solve_ode_value(threshold(50, 0), testing::reward_table(Eigen::Vector2d(1, -1)), data, beta, b_n, 0.05);
  for (double v : all.h) CHECK(std::abs(v) < 1e-15);

  // treat only x = 1 with rewards 2 and -1: r_theta = 1, pi(1) = 1/2
  const auto half = solve_ode_value(threshold(0, 50), testing::reward_table(Eigen::Vector2d(2, -1)), data, beta, b_n, 0.05);
  double h = 0;
  for (int k = 1; k <= 5; ++k) {
    h = (1.0 / b_n + g * 0.5 * h) / (1 - g * 0.5);
    CHECK(half.h[static_cast<std::size_t>(k)] == doctest::Approx(h).epsilon(1e-14));
  }
  CHECK(half.at_start() == doctest::Approx(h).epsilon(1e-14));
  CHECK_THROWS_AS(solve_ode_value(threshold(0, 1), testing::reward_table(Eigen::Vector2d(1, 1)), data, 200, 100, 0.05),
                  ValidationError);
}

TEST_CASE("brute force on trivial instances") {
  TinyInstance in;
  in.x = {Eigen::VectorXd::Constant(1, 0.0)};
  in.reward = {1.0};
  in.multiplicity = {1};
  in.b_n = 4;
  in.cost = 0.1;
  in.epochs = 1;
  const double p = 0.6;
  CHECK(brute_force_welfare(threshold(std::log(p / (1 - p)), 0), in) == doctest::Approx(p / 4).epsilon(1e-15));
  CHECK(brute_force_welfare(threshold(-800, 0), in) == 0.0);
  in.epochs = 40;
  in.cost = 0.01;
  CHECK_THROWS(brute_force_welfare(threshold(0, 0), in, 12));
}

TEST_CASE("lattice solver equals brute force") {
  for (double z0 : {0.25, 0.6, 1.0}) {
    const TinyInstance in = tiny(3, z0);
    for (const auto& p : {threshold(0, 0), threshold(0.5, 2), threshold(-1, 0.3)}) {
      DpOptions o;
      o.deterministic = true;
      CHECK(std::abs(dp_value_at_start(p, *in.to_env_inputs(), o) - brute_force_welfare(p, in)) < 1e-12);
    }
  }
}

TEST_CASE("grid solver boundaries and linearity") {
  Rng rng(1);
  const Eigen::VectorXd r = random_rewards(30, rng, 0.2);
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 2));
  for (auto& v : p.theta) v = rng.normal();
  DpOptions o;
  o.time_steps = 40;
  const auto g = solve_dp_value(p, *grid_inputs(r, 20, 0.5, 2), o);
  const auto g2 = solve_dp_value(p, *grid_inputs(2 * r, 20, 0.5, 2), o);
  REQUIRE(g.t.back() == 1.0);
  for (std::size_t i = 0; i < g.z.size(); ++i) CHECK(g.h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g.t.size() - 1)) == 0.0);
  for (std::size_t j = 0; j < g.t.size(); ++j) CHECK(g.h(0, static_cast<Eigen::Index>(j)) == 0.0);
  CHECK(g.h.allFinite());
  CHECK((g2.h - 2 * g.h).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(g.max_residual < 1e-8);
}

TEST_CASE("property: nonnegative rewards give a monotone value") {
  // a policy that ignores t; a time-varying one can prefer to start later
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Eigen::VectorXd r = random_rewards(25, rng, 0.0).cwiseAbs();
    PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("static", 2));
    for (auto& v : p.theta) v = rng.normal();
    DpOptions o;
    o.time_steps = 30;
    const auto g = solve_dp_value(p, *grid_inputs(r, 15, 0.6, seed), o);
    const auto& h = g.h;
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        CHECK(h(i, j) >= 0.0);
        if (i > 0) CHECK(h(i, j) >= h(i - 1, j) - 1e-12);
        if (j > 0) CHECK(h(i, j) <= h(i, j - 1) + 1e-12);
      }
  }
}

TEST_CASE("property: shifting rewards moves the value by at most the discounted arrivals") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed + 10);
    const Eigen::VectorXd r = random_rewards(20, rng, 0.1);
    PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("static", 2));
    for (auto& v : p.theta) v = rng.normal();
    DpOptions o;
    o.time_steps = 30;
    const auto base = solve_dp_value(p, *grid_inputs(r, 12, 0.5, seed), o);
    const std::size_t iz = index_of(base.z, 0.5), it = index_of(base.t, 0.0);
    const double C = base.discounted_arrivals(static_cast<Eigen::Index>(iz), static_cast<Eigen::Index>(it));
    CHECK(C > 0);
    for (double eps : {0.01, 0.1}) {
      const auto up = solve_dp_value(p, *grid_inputs(r.array() + eps, 12, 0.5, seed), o);
      const double shift = up.h(static_cast<Eigen::Index>(iz), static_cast<Eigen::Index>(it)) -
                           base.h(static_cast<Eigen::Index>(iz), static_cast<Eigen::Index>(it));
      CHECK(shift >= 0.0);
      CHECK(shift <= eps * C + 1e-12);
    }
  }
}

TEST_CASE("grid solver agrees with simulation") {
  Rng rng(3);
  const Eigen::VectorXd r = random_rewards(40, rng, 0.3);
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 2));
  for (auto& v : p.theta) v = rng.normal();
  const auto inputs = grid_inputs(r, 50, 0.06, 4);  // three treatments
  DpOptions o;
  o.time_steps = 400;
  const double dp = dp_value_at_start(p, *inputs, o);
  EvalOptions eo;
  eo.episodes = 40000;
  eo.seed = 5;
  const auto mc = evaluate_welfare(EvalPolicy::stochastic(p), Environment(inputs), eo);
  CHECK(std::abs(dp - mc.mean_welfare) < 1.5 * mc.ci_halfwidth + 2e-3);
}

TEST_CASE("serial and parallel grid solves agree bitwise") {
  Rng rng(6);
  const Eigen::VectorXd r = random_rewards(30, rng, 0.0);
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 2));
  for (auto& v : p.theta) v = rng.normal();
  DpOptions par, ser;
  par.time_steps = ser.time_steps = 50;
  ser.parallel = false;
  const auto in = grid_inputs(r, 25, 0.7, 7);
  const auto a = solve_dp_value(p, *in, par);
  const auto b = solve_dp_value(p, *in, ser);
  CHECK(a.h == b.h);
  CHECK(a.discounted_arrivals == b.discounted_arrivals);
}

TEST_CASE("periodic regime converges to a small residual") {
  Rng rng(8);
  const Eigen::VectorXd r = random_rewards(20, rng, 0.2);
  auto data = testing::gaussian_data(20, 2, rng);
  EnvConfig c;
  c.boundary = Boundary::periodic;
  c.horizon = kInf;
  c.b_n = 10;
  c.cost = 0.1;
  c.income_rate = 0.5;
  c.beta = 0.5;
  const auto in = EnvInputs::create(c, std::move(data), testing::reward_table(r));
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 2));
  DpOptions o;
  o.time_steps = 20;
  o.z_max = 2.0;
  const auto g = solve_dp_value(p, *in, o);
  CHECK(g.max_residual < 1e-8);
  CHECK(g.h.allFinite());
  CHECK(g.at(0.5, 0.25) == doctest::Approx(g.at(0.5, 1.25)).epsilon(1e-12));
}

TEST_CASE("finite-difference gradients") {
  const TinyInstance in = tiny(4, 1.0);
  auto value = [&](const PolicyParams& q) { return brute_force_welfare(q, in); };

  CHECK(policy_grad_fd(threshold(60, 0), value, 1e-4).norm() < 1e-12);

  // mirror-image types with ample budget: the constant term has no effect
  TinyInstance sym = in;
  sym.reward = {1.0, -1.0};
  sym.multiplicity = {1, 1};
  auto sym_value = [&](const PolicyParams& q) { return brute_force_welfare(q, sym); };
  CHECK(std::abs(policy_grad_fd(threshold(0, 0), sym_value, 1e-4)[0]) < 1e-6);

  const auto p = threshold(0.3, -0.2);
  const auto a = policy_grad_fd(p, value, 1e-3), b = policy_grad_fd(p, value, 1e-4);
  CHECK((a - b).cwiseAbs().maxCoeff() < 10 * 1e-6 * std::max(1.0, a.norm()));
}
