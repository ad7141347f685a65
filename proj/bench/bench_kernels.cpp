// Parallel kernels against their serial reference paths. The second argument
// of each benchmark is 1 for the OpenMP path and 0 for the serial one.
#include "dyntreat/actor_critic.hpp"
#include "dyntreat/dp_oracle.hpp"
#include "dyntreat/evaluation.hpp"
#include "dyntreat/policy.hpp"
#include "dyntreat/synth.hpp"

#include <benchmark/benchmark.h>

#include <memory>

using namespace dyntreat;

namespace {

struct Instance {
  ObservationalData data;
  RewardTable rewards;
  std::shared_ptr<const EnvInputs> inputs;
};

// Synthetic rows with the true effect as the reward, standardized covariates.
const Instance& instance() {
  static const Instance in = [] {
    Instance i;
    auto out = synth_data(SynthSpec::jtpa_like(2000), 1);
    i.data = std::move(out.data);
    standardize_columns(i.data.x);
    i.rewards.r_hat = Eigen::Map<const Eigen::VectorXd>(out.truth.tau.data(), static_cast<Eigen::Index>(out.truth.tau.size()));
    EnvConfig c;
    c.b_n = 200;
    c.cost = 1.0 / 50;
    i.inputs = EnvInputs::create(c, i.data, i.rewards);
    return i;
  }();
  return in;
}

PolicyParams some_policy() {
  PolicyParams p = PolicyParams::zeros(FeatureSpec::preset("dynamic", 3));
  for (Eigen::Index j = 0; j < p.theta.size(); ++j) p.theta[j] = 0.3 * std::cos(static_cast<double>(j));
  return p;
}

void BM_Ewm(benchmark::State& state) {
  const auto& in = instance();
  EwmOptions o;
  o.directions = static_cast<std::size_t>(state.range(0));
  o.parallel = state.range(1) != 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(ewm_search(in.rewards, in.data, 0.25, FeatureSpec::preset("static", 3), o).welfare);
}
BENCHMARK(BM_Ewm)->Args({2000, 0})->Args({2000, 1})->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  const auto& in = instance();
  const Environment env(in.inputs);
  EvalOptions o;
  o.episodes = static_cast<std::size_t>(state.range(0));
  o.parallel = state.range(1) != 0;
  const auto p = EvalPolicy::stochastic(some_policy());
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_welfare(p, env, o).mean_welfare);
}
BENCHMARK(BM_Evaluate)->Args({500, 0})->Args({500, 1})->Unit(benchmark::kMillisecond);

void BM_GridValue(benchmark::State& state) {
  const auto& in = instance();
  DpOptions o;
  o.time_steps = static_cast<std::size_t>(state.range(0));
  o.parallel = state.range(1) != 0;
  const auto p = some_policy();
  for (auto _ : state) benchmark::DoNotOptimize(dp_value_at_start(p, *in.inputs, o));
}
BENCHMARK(BM_GridValue)->Args({100, 0})->Args({100, 1})->Unit(benchmark::kMillisecond);

// Single-writer interleaving against threaded lock-per-batch workers.
void BM_Train(benchmark::State& state) {
  const auto& in = instance();
  const Environment env(in.inputs);
  TrainConfig c;
  c.workers = 4;
  c.batch_size = 64;
  c.max_updates = static_cast<std::size_t>(state.range(0));
  c.eval_episodes = 10;
  c.mode = state.range(1) != 0 ? UpdateMode::lock_per_batch : UpdateMode::single_writer;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        train_a3c(c, env, PolicyParams::zeros(FeatureSpec::preset("dynamic", 3)),
                  ValueWeights::zeros(BasisSpec::preset("appendixE9")))
            .updates);
}
BENCHMARK(BM_Train)->Args({200, 0})->Args({200, 1})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
