#include "support.hpp"

#include "dyntreat/config.hpp"
#include "dyntreat/error.hpp"
#include "dyntreat/evaluation.hpp"
#include "dyntreat/pipeline.hpp"
#include "dyntreat/synth.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

namespace fs = std::filesystem;
using namespace dyntreat;

namespace {

Environment gaussian_env(std::size_t n, double b_n, double cost, std::uint64_t seed = 1) {
  Rng rng(seed);
  auto data = testing::gaussian_data(n, 2, rng);
  auto r = testing::true_rewards(data);
  EnvConfig c;
  c.b_n = b_n;
  c.cost = cost;
  return Environment(EnvInputs::create(c, std::move(data), std::move(r)));
}

PolicyParams random_policy(Rng& rng) {
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 2));
  for (auto& v : p.theta) v = rng.normal();
  return p;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "dyntreat_unit" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path source_config(const std::string& name) { return fs::path(DYNTREAT_SOURCE_DIR) / "configs" / name; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + DYNTREAT_CLI + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("random policy has relative welfare one") {
  const auto env = gaussian_env(50, 30, 0.05);
  EvalOptions o;
  o.episodes = 200;
  const auto r = evaluate_welfare(EvalPolicy::random(), env, o);
  CHECK(r.relative_welfare == 1.0);
  CHECK(r.mean_welfare == r.random_welfare);
  CHECK(r.ci_halfwidth >= 0);
  CHECK(r.episodes == 200);
  CHECK(r.per_episode.size() == 200);
  CHECK(r.treatment_share >= 0);
  CHECK(r.treatment_share <= 1);
}

TEST_CASE("treat-nobody earns nothing") {
  const auto env = gaussian_env(50, 30, 0.05);
  const auto r = evaluate_welfare(EvalPolicy::treat_none(), env, {});
  CHECK(r.mean_welfare == 0.0);
  CHECK(r.treatment_share == 0.0);
  CHECK(r.exhaustion_rate == 0.0);
}

TEST_CASE("property: a policy compared with itself differs by exactly zero") {
  const auto env = gaussian_env(60, 30, 0.05);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto p = random_policy(rng);
    EvalOptions o;
    o.episodes = 50;
    o.seed = seed;
    for (const auto& e : {EvalPolicy::stochastic(p), EvalPolicy::threshold(p)}) {
      const auto c = compare(e, e, env, o);
      CHECK(c.mean_difference == 0.0);
      CHECK(c.ci_halfwidth == 0.0);
    }
  }
}

TEST_CASE("treat-all beats treat-nobody when every reward is positive") {
  Rng rng(2);
  auto data = testing::gaussian_data(40, 2, rng);
  Eigen::VectorXd r = Eigen::VectorXd::Constant(40, 0.5);
  EnvConfig c;
  c.b_n = 20;
  c.cost = 0.1;
  const Environment env(EnvInputs::create(c, std::move(data), testing::reward_table(r)));
  const auto cmp = compare(EvalPolicy::treat_all(), EvalPolicy::treat_none(), env, {});
  CHECK(cmp.mean_difference > 0);
  CHECK(cmp.b.mean_welfare == 0.0);
}

TEST_CASE("serial and parallel evaluation agree bitwise") {
  const auto env = gaussian_env(70, 40, 0.04);
  Rng rng(3);
  const auto p = random_policy(rng);
  EvalOptions par, ser;
  par.episodes = ser.episodes = 300;
  par.seed = ser.seed = 4;
  ser.parallel = false;
  const auto a = evaluate_welfare(EvalPolicy::stochastic(p), env, par);
  const auto b = evaluate_welfare(EvalPolicy::stochastic(p), env, ser);
  CHECK(a.per_episode == b.per_episode);
  CHECK(a.mean_welfare == b.mean_welfare);
  CHECK(a.ci_halfwidth == b.ci_halfwidth);
  CHECK(a.relative_welfare == b.relative_welfare);
  const auto sa = selectivity_stats(EvalPolicy::stochastic(p), env, 50, 5, true);
  const auto sb = selectivity_stats(EvalPolicy::stochastic(p), env, 50, 5, false);
  CHECK(sa.mean_rejections == sb.mean_rejections);
  CHECK(sa.month_events == sb.month_events);
}

TEST_CASE("pairwise sum") {
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
  CHECK(pairwise_sum(std::vector<double>{1.5}) == 1.5);
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(pairwise_sum(v) == 500500.0);
  // many small terms after a large one are kept
  std::vector<double> w(1 << 16, 1e-16);
  w[0] = 1.0;
  CHECK(std::abs(pairwise_sum(w) - (1.0 + 65535e-16)) < 1e-15);
}

TEST_CASE("selectivity of simple policies") {
  const auto env = gaussian_env(60, 200, 0.001);
  const auto all = selectivity_stats(EvalPolicy::treat_all(), env, 20, 1);
  CHECK(all.events > 0);
  CHECK(all.mean_rejections == 0.0);
  for (double m : all.month_mean) CHECK(m == 0.0);

  // pi = 1/3 everywhere: rejections before a treatment are geometric with mean 2
  PolicyParams third = PolicyParams::zeros(FeatureSpec::parse({"1"}));
  third.theta[0] = std::log(0.5);
  const auto s = selectivity_stats(EvalPolicy::stochastic(third), env, 200, 2);
  REQUIRE(s.events >= 10000);
  CHECK(std::abs(s.mean_rejections - 2.0) < 0.1);
  std::size_t by_month = 0, by_decile = 0;
  for (auto e : s.month_events) by_month += e;
  for (auto e : s.decile_events) by_decile += e;
  CHECK(by_month == s.events);
  CHECK(by_decile == s.events);
  CHECK(s.decile_low == env.config().z_lower);
  CHECK(s.decile_high == env.config().z0);
}

TEST_CASE("config validation") {
  const nlohmann::json good = nlohmann::json::parse(slurp(source_config("smoke.json")));
  CHECK_NOTHROW(PipelineConfig::from_json(good));

  auto bad = good;
  bad["trian"] = nlohmann::json::object();
  CHECK_THROWS_WITH_AS(PipelineConfig::from_json(bad), doctest::Contains("trian"), ValidationError);
  bad = good;
  bad["version"] = 2;
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), ValidationError);
  bad = good;
  bad["data"] = {{"path", "x.csv"}, {"columns", {{"covariates", {"a"}}}}};
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), ValidationError);
  bad = good;
  bad["train"]["batch_size"] = "large";
  CHECK_THROWS_AS(PipelineConfig::from_json(bad), ValidationError);
  CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/config.json"), IoError);

  const auto c = PipelineConfig::from_json(good);
  const auto again = PipelineConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());
  CHECK(c.train.max_updates == 200);
  CHECK(c.synth.has_value());
  CHECK(c.synth->n == 500);
}

TEST_CASE("bundled configs load") {
  for (const char* name : {"jtpa_like.json", "jtpa_like_synth.json", "smoke.json"}) {
    const auto c = PipelineConfig::load(source_config(name));
    CHECK(c.budget_share == 0.25);
    CHECK(c.env.beta == doctest::Approx(-std::log(0.9)));
  }
  const auto c = PipelineConfig::load(source_config("jtpa_like.json"));
  REQUIRE(c.data_path.has_value());
  CHECK(fs::exists(c.base_dir / *c.data_path));
}

TEST_CASE("synthetic data shapes and truth") {
  const auto out = synth_data(SynthSpec::jtpa_like(9223), 1);
  CHECK(out.data.size() == 9223);
  CHECK(out.data.dim() == 3);
  CHECK(out.data.arrival_time.has_value());
  double treated = 0;
  for (int w : out.data.w) treated += w;
  CHECK(treated / 9223 == doctest::Approx(2.0 / 3.0).epsilon(0.03));
  bool pos = false, neg = false;
  const auto spec = SynthSpec::jtpa_like(9223);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    CHECK(out.truth.tau[i] == doctest::Approx(spec.effect(out.data.row(i))));
    pos = pos || out.truth.tau[i] > 0;
    neg = neg || out.truth.tau[i] < 0;
  }
  CHECK(pos);
  CHECK(neg);

  SynthSpec zero = SynthSpec::jtpa_like(300);
  zero.effect = EffectSpec{0.0, {0, 0, 0}, {0, 0, 0}};
  CHECK(synth_data(zero, 2).truth.ate == 0.0);
}

TEST_CASE("pipeline smoke run, resume and corruption") {
  const fs::path out = scratch("smoke");
  const auto config = PipelineConfig::load(source_config("smoke.json"));
  RunOptions o;
  o.out = out;
  o.deterministic = true;
  const auto first = run_pipeline(config, o);
  CHECK(first.size() == kStages.size());
  for (const auto& r : first) CHECK_FALSE(r.skipped);
  for (const char* f : {"policy.json", "curve.csv", "eval_report.json", "compare.json", "selectivity.json",
                        "ewm_policy.json", "manifest.json"})
    CHECK(fs::exists(out / f));

  const auto second = run_pipeline(config, o);
  for (const auto& r : second) CHECK(r.skipped);

  std::ofstream(out / "rewards.csv", std::ios::app) << "tampered\n";
  CHECK_THROWS_WITH_AS(run_pipeline(config, o), doctest::Contains("rewards.csv"), HashMismatch);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("--config /nonexistent.json pipeline") == 2);
  CHECK(run_cli("pipeline") == 2);

  std::ofstream(dir / "bad.json") << R"({"version": 1, "synth": {"preset": "jtpa_like"}, "train": {"alpha_theta": -1}})";
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string() + " train") == 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run_cli("--config " + (dir / "broken.json").string() + " --out " + (dir / "b").string() + " synth") == 2);

  auto j = nlohmann::json::parse(slurp(source_config("smoke.json")));
  std::ofstream(dir / "ok.json") << j.dump();
  CHECK(run_cli("--config " + (dir / "ok.json").string() + " --out " + (dir / "ok").string() + " --quiet synth") == 0);
  CHECK(fs::exists(dir / "ok" / "synth" / "data.csv"));
}
