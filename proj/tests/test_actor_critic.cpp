#include "support.hpp"

#include "dyntreat/actor_critic.hpp"
#include "dyntreat/dp_oracle.hpp"
#include "dyntreat/error.hpp"
#include "dyntreat/online.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace dyntreat;

namespace {

// Two types on one covariate: x = 1 gains, x = -1 loses. Eight lattice
// epochs and a budget for two treatments.
TinyInstance two_types() {
  TinyInstance in;
  in.x = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -1.0)};
  in.reward = {1.0, -0.5};
  in.multiplicity = {1, 1};
  in.beta = 0.1;
  in.b_n = 4;
  in.cost = 0.25;
  in.z0 = 0.5;
  in.dt = 0.125;
  in.epochs = 8;
  return in;
}

Environment env_of(const TinyInstance& in) { return Environment(in.to_env_inputs()); }

Environment gaussian_env(std::size_t n, double b_n, Eigen::VectorXd rewards = {}) {
  Rng rng(1);
  auto data = testing::gaussian_data(n, 2, rng);
  auto r = rewards.size() ? testing::reward_table(std::move(rewards)) : testing::true_rewards(data);
  EnvConfig c;
  c.b_n = b_n;
  c.cost = 0.05;
  return Environment(EnvInputs::create(c, std::move(data), std::move(r)));
}

TrainConfig base_config() {
  TrainConfig c;
  c.alpha_theta = 5.0;
  c.alpha_v = 0.1;
  c.batch_size = 1;
  c.workers = 1;
  c.eval_episodes = 10;
  c.mode = UpdateMode::single_writer;
  return c;
}

}  // namespace

TEST_CASE("frozen learning leaves the parameters alone") {
  const auto env = gaussian_env(50, 20);
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 2));
  p.theta.setConstant(0.3);
  ValueWeights w = ValueWeights::zeros(BasisSpec::preset("appendixE9"));
  w.nu.setConstant(0.2);
  const auto p0 = p.theta;
  const auto w0 = w.nu;
  TrainConfig c = base_config();
  c.alpha_theta = 0;
  c.alpha_v = 0;
  Rng rng(2);
  const auto stats = train_episode(env, p, w, c, rng);
  CHECK(p.theta == p0);
  CHECK(w.nu == w0);
  CHECK(std::isfinite(stats.welfare));
  CHECK(stats.length > 0);
}

TEST_CASE("one worker with unit batches replays train_episode") {
  const auto env = gaussian_env(60, 20);
  const auto spec = FeatureSpec::preset("dynamic", 2);
  const auto basis = BasisSpec::preset("appendixE9");
  TrainConfig c = base_config();
  c.alpha_theta = 0.5;
  c.max_episodes = 25;
  c.seed = 9;
  const TrainedPolicy t = train_a3c(c, env, PolicyParams::zeros(spec), ValueWeights::zeros(basis));
  REQUIRE(t.ok());

  PolicyParams p = PolicyParams::zeros(spec);
  ValueWeights w = ValueWeights::zeros(basis);
  Rng rng = Rng::substream(c.seed, "train-worker", 0);
  std::size_t steps = 0;
  for (int e = 0; e < 25; ++e) steps += train_episode(env, p, w, c, rng).length;
  CHECK(t.policy.theta == p.theta);
  CHECK(t.value.nu == w.nu);
  CHECK(t.updates == steps);
  CHECK(t.episodes == 25);
  CHECK(p.theta.norm() > 0);
}

TEST_CASE("a batch update is the mean of the per-step terms") {
  const auto env = gaussian_env(60, 20);
  const auto spec = FeatureSpec::preset("dynamic", 2);
  const auto basis_spec = BasisSpec::preset("appendixE9");
  for (std::size_t B : {1, 4, 16, 200}) {
    TrainConfig c = base_config();
    c.batch_size = B;
    c.max_updates = 1;
    c.seed = 3;
    PolicyParams p0 = PolicyParams::zeros(spec);
    p0.theta.setConstant(0.1);
    ValueWeights w0 = ValueWeights::zeros(basis_spec);
    w0.nu.setConstant(0.05);
    const TrainedPolicy t = train_a3c(c, env, p0, w0);

    // oracle: the per-step terms written out by hand at the frozen parameters
    Rng rng = Rng::substream(c.seed, "train-worker", 0);
    State s = env.reset(rng);
    Eigen::VectorXd dtheta = Eigen::VectorXd::Zero(p0.theta.size()), dnu = Eigen::VectorXd::Zero(w0.nu.size());
    for (std::size_t k = 0; k < B; ++k) {
      const StateView v = env.view(s);
      const double pr = action_prob(p0, v);
      const int a = rng.uniform() < pr ? 1 : 0;
      const Transition tr = env.step(s, a, rng);
      const double delta = td_error(tr.reward, env.config().beta, tr.dt, !tr.terminal, w0, s.z, s.t, tr.next.z,
                                    tr.next.t);
      dtheta += c.alpha_theta * s.discount * delta * log_grad(p0, v, a);
      dnu += c.alpha_v * delta * basis(s.z, s.t, basis_spec);
      if (tr.ends_episode()) break;
      s = tr.next;
    }
    const Eigen::VectorXd want_theta = p0.theta + dtheta / static_cast<double>(B);
    const Eigen::VectorXd want_nu = w0.nu + dnu / static_cast<double>(B);
    CHECK((t.policy.theta - want_theta).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((t.value.nu - want_nu).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("single writer training is bitwise reproducible") {
  const auto env = gaussian_env(80, 30);
  TrainConfig c = base_config();
  c.workers = 3;
  c.batch_size = 8;
  c.max_updates = 60;
  c.eval_every = 20;
  c.seed = 4;
  const auto spec = FeatureSpec::preset("dynamic", 2);
  const auto a = train_a3c(c, env, PolicyParams::zeros(spec), ValueWeights::zeros(BasisSpec::preset("appendixE9")));
  const auto b = train_a3c(c, env, PolicyParams::zeros(spec), ValueWeights::zeros(BasisSpec::preset("appendixE9")));
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
  CHECK(a.curve.size() == 3);
  for (std::size_t i = 1; i < a.curve.size(); ++i) CHECK(a.curve[i].episodes >= a.curve[i - 1].episodes);
}

TEST_CASE("threaded training runs to the update limit") {
  const auto env = gaussian_env(80, 30);
  for (UpdateMode m : {UpdateMode::lock_per_batch, UpdateMode::hogwild}) {
    TrainConfig c = base_config();
    c.mode = m;
    c.workers = 3;
    c.batch_size = 8;
    c.max_updates = 100;
    const auto t = train_a3c(c, env, PolicyParams::zeros(FeatureSpec::preset("static", 2)),
                             ValueWeights::zeros(BasisSpec::preset("appendixE9")));
    CHECK(t.ok());
    CHECK(t.updates >= 100);
    CHECK(t.policy.theta.allFinite());
  }
}

TEST_CASE("null rewards: the critic decays to zero and then the actor stops") {
  const auto env = gaussian_env(40, 20, Eigen::VectorXd::Zero(40));
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("static", 2));
  ValueWeights w = ValueWeights::zeros(BasisSpec::parse({"z*(1-t)", "z^2*(1-t)"}));
  w.nu << 0.5, -0.3;
  const double start = w.nu.norm();
  TrainConfig c = base_config();
  c.alpha_theta = 1.0;
  c.alpha_v = 0.5;
  Rng rng(5);
  for (int e = 0; e < 5000; ++e) train_episode(env, p, w, c, rng);
  CHECK(w.nu.norm() < 0.05 * start);
  CHECK(p.theta.allFinite());

  // at nu = 0 every TD error vanishes, so neither parameter can move
  w.nu.setZero();
  const auto frozen = p.theta;
  for (int e = 0; e < 20; ++e) train_episode(env, p, w, c, rng);
  CHECK(p.theta == frozen);
  CHECK(w.nu.isZero(0));
}

TEST_CASE("divergence stops training with the last finite parameters") {
  const auto env = gaussian_env(60, 20);
  TrainConfig c = base_config();
  c.alpha_theta = 50;
  c.max_updates = 5000;
  c.divergence_threshold = 0.5;
  const auto t = train_a3c(c, env, PolicyParams::zeros(FeatureSpec::preset("static", 2)),
                           ValueWeights::zeros(BasisSpec::preset("appendixE9")));
  CHECK(t.status == "diverged");
  CHECK(t.message.find("diverged") != std::string::npos);
  CHECK(t.policy.theta.norm() <= 0.5);
  CHECK(t.value.nu.norm() <= 0.5);
  CHECK(t.updates < 5000);
}

TEST_CASE("invalid training configs are rejected") {
  TrainConfig c = base_config();
  c.max_updates = 10;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.batch_size = 1;
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.workers = 1;
  c.max_updates = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(parse_update_mode("eventually"), ValidationError);
}

TEST_CASE("saturated policy has a vanishing gradient estimate") {
  const auto env = gaussian_env(50, 20);
  PolicyParams p = PolicyParams::zeros(FeatureSpec::parse({"1"}));
  p.theta[0] = 60;
  ValueWeights w = ValueWeights::zeros(BasisSpec::preset("appendixE9"));
  w.nu.setConstant(0.1);
  Rng rng(6);
  const auto g = policy_gradient_estimate(env, p, w, 2000, rng);
  CHECK(g.steps >= 2000);
  CHECK(g.per_episode.norm() < 1e-20);
}

TEST_CASE("actor-critic on two types reaches the class optimum") {
  const TinyInstance in = two_types();
  const auto env = env_of(in);
  const auto spec = FeatureSpec::preset("static", 1);

  // oracle: exact welfare over a grid of thresholds
  double best = 0;
  for (int a = -8; a <= 8; ++a)
    for (int b = -8; b <= 8; ++b) {
      PolicyParams q = PolicyParams::zeros(spec);
      q.theta << a, b;
      best = std::max(best, brute_force_welfare(q, in));
    }
  REQUIRE(best > 0);

  PolicyParams p = PolicyParams::zeros(spec);
  ValueWeights w = ValueWeights::zeros(BasisSpec::preset("appendixE9"));
  TrainConfig c = base_config();
  Rng rng(7);
  for (int e = 0; e < 2000; ++e) train_episode(env, p, w, c, rng);
  const double got = brute_force_welfare(p, in);
  CHECK(got >= 0.95 * best);
}

TEST_CASE("property: training improves on the initial policy") {
  const TinyInstance in = two_types();
  const auto env = env_of(in);
  const auto spec = FeatureSpec::preset("static", 1);
  const double initial = brute_force_welfare(PolicyParams::zeros(spec), in);
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TrainConfig c = base_config();
    c.alpha_theta = 1.0;
    c.batch_size = 4;
    c.max_episodes = 300;
    c.seed = seed;
    const auto t = train_a3c(c, env, PolicyParams::zeros(spec), ValueWeights::zeros(BasisSpec::preset("appendixE9")));
    if (brute_force_welfare(t.policy, in) > initial) ++improved;
  }
  CHECK(improved >= 19);
}

TEST_CASE("trained policy json round trip") {
  const auto env = gaussian_env(40, 20);
  TrainConfig c = base_config();
  c.max_updates = 30;
  const auto t = train_a3c(c, env, PolicyParams::zeros(FeatureSpec::preset("static", 2)),
                           ValueWeights::zeros(BasisSpec::preset("appendixE9")));
  const nlohmann::json j = t;
  CHECK_FALSE(j.contains("wall_seconds"));
  const auto back = j.get<TrainedPolicy>();
  CHECK(back.policy.theta == t.policy.theta);
  CHECK(back.value.nu == t.value.nu);
  CHECK(back.curve.size() == t.curve.size());
  CHECK(back.config.alpha_theta == c.alpha_theta);
  CHECK(nlohmann::json(back).dump() == j.dump());
}

namespace {

// Arrivals at a steady pace; outcomes Y = 1 + W (0.5 + x) + noise.
struct OnlineRun {
  std::vector<double> probability;
  std::vector<Eigen::VectorXd> theta;
  std::vector<std::size_t> sweeps;
};

OnlineRun run_online(std::size_t steps, const OnlineConfig& oc, std::uint64_t seed) {
  EnvConfig env;
  env.b_n = 50;
  env.cost = 0.02;
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("static", 1));
  ValueWeights w = ValueWeights::zeros(BasisSpec::preset("appendixE9"));
  OnlineHistory h;
  h.dim = 1;
  Rng rng(seed);
  OnlineRun out;
  double z = env.z0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(2 * steps);
    const std::vector<double> x = {rng.normal()};
    const auto d = online_decision_step(h, {x, z, t}, p, w, oc, env, RateModel::constant(1), i + 1, rng);
    out.probability.push_back(d.probability);
    out.theta.push_back(p.theta);
    out.sweeps.push_back(d.sweeps);
    const double y = 1 + d.action * (0.5 + x[0]) + 0.3 * rng.normal();
    h.append(x, d.action, d.probability, y, z, t);
    if (d.action) z -= env.cost;
  }
  return out;
}

}  // namespace

TEST_CASE("online learning starts with fair coins") {
  OnlineConfig oc;
  oc.episodes_per_sweep = 2;
  oc.max_sweeps = 5;
  const auto run = run_online(25, oc, 8);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(run.probability[i] == 0.5);
    CHECK(run.theta[i].isZero(0));
  }
  CHECK_FALSE(run.theta.back().isZero(0));
}

TEST_CASE("online learning with a zero step keeps the policy") {
  OnlineConfig oc;
  oc.alpha_theta = 0;
  oc.episodes_per_sweep = 2;
  oc.max_sweeps = 200;
  oc.sweep_tolerance = 1e-3;
  const auto run = run_online(30, oc, 9);
  for (std::size_t i = 20; i < 30; ++i) {
    CHECK(run.theta[i].isZero(0));
    CHECK(run.probability[i] == 0.5);
    CHECK(run.sweeps[i] < oc.max_sweeps);
  }
}
