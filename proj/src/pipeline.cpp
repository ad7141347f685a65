#include "dyntreat/pipeline.hpp"

#include "dyntreat/actor_critic.hpp"
#include "dyntreat/arrivals.hpp"
#include "dyntreat/dp_oracle.hpp"
#include "dyntreat/evaluation.hpp"
#include "dyntreat/nuisance.hpp"
#include "dyntreat/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace dyntreat {

namespace fs = std::filesystem;
using nlohmann::json;

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return file_hash_string(ss.str());
}

namespace {

constexpr const char* kManifest = "manifest.json";

std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) { return Rng::substream(master, stage).next(); }

struct Context {
  PipelineConfig config;
  RunOptions options;
  fs::path out;

  fs::path data_path() const {
    if (config.synth) return out / "synth" / "data.csv";
    const fs::path p = *config.data_path;
    return p.is_absolute() ? p : config.base_dir / p;
  }
};

Context make_context(const PipelineConfig& config, const RunOptions& options) {
  Context c{config, options, options.out};
  if (options.seed) {
    c.config.seed = *options.seed;
    c.config.train.seed = *options.seed;
  }
  if (options.workers) c.config.train.workers = *options.workers;
  if (options.deterministic) c.config.train.mode = UpdateMode::single_writer;
  c.config.train.validate();
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + " is not valid JSON: " + e.what());
  }
}

ObservationalData load_data(const Context& c) { return load_dataset(c.data_path(), c.config.columns); }

double expected_arrivals(const RateModel& m, const EnvConfig& e, double b_n) {
  const double t_end = !e.periodic_time() && std::isfinite(e.horizon) ? e.horizon : e.t0 + e.period;
  const std::size_t nodes = 10000;
  const double h = (t_end - e.t0) / static_cast<double>(nodes);
  double s = 0;
  for (std::size_t k = 0; k < nodes; ++k) s += aggregate_rate(m, e.t0 + (static_cast<double>(k) + 0.5) * h);
  return b_n * s * h;
}

PreparedEnv build_env(const Context& c) {
  ObservationalData data = load_data(c);
  RewardTable rewards = load_reward_table(c.out / "rewards.csv");
  ClusterAssignment clusters = load_clusters(c.out / "clusters.csv", data.x);
  return prepare_env(c.config, std::move(data), std::move(rewards), std::move(clusters),
                     load_rate_model(c.out / "rates.json"));
}

PolicyParams load_policy(const fs::path& path) { return read_json(path).at("policy").get<PolicyParams>(); }

struct StageDef {
  std::vector<fs::path> inputs;
  std::vector<std::string> outputs;
  json config;
};

StageDef describe(const std::string& stage, const Context& c) {
  const auto& k = c.config;
  const json full = k.to_json();
  const fs::path o = c.out;
  auto sub = [&](std::initializer_list<const char*> keys) {
    json j;
    for (const char* key : keys)
      if (full.contains(key)) j[key] = full.at(key);
    j["seed"] = k.seed;
    return j;
  };
  if (stage == "synth") return {{}, {"synth/data.csv", "synth/truth.json"}, sub({"synth"})};
  const fs::path data = c.data_path();
  if (stage == "estimate") return {{data}, {"rewards.csv", "estimate.json"}, sub({"data", "estimate"})};
  if (stage == "cluster") return {{data}, {"clusters.csv"}, sub({"data", "cluster"})};
  if (stage == "rates") return {{data, o / "clusters.csv"}, {"rates.json"}, sub({"data", "rates", "env"})};
  const std::vector<fs::path> env_in = {data, o / "rewards.csv", o / "clusters.csv", o / "rates.json"};
  auto with = [&](std::vector<fs::path> extra) {
    std::vector<fs::path> v = env_in;
    v.insert(v.end(), extra.begin(), extra.end());
    return v;
  };
  if (stage == "ewm") return {env_in, {"ewm_policy.json"}, sub({"env", "budget_share", "ewm"})};
  if (stage == "train") {
    json j = sub({"env", "budget_share", "policy", "value", "train"});
    j["train"] = k.train;  // after command-line overrides
    return {env_in, {"policy.json", "curve.csv"}, j};
  }
  if (stage == "evaluate") return {with({o / "policy.json"}), {"eval_report.json"}, sub({"env", "budget_share", "evaluate"})};
  if (stage == "compare")
    return {with({o / "policy.json", o / "ewm_policy.json"}), {"compare.json"}, sub({"env", "budget_share", "evaluate"})};
  if (stage == "selectivity")
    return {with({o / "policy.json"}), {"selectivity.json"}, sub({"env", "budget_share", "evaluate"})};
  throw ValidationError("unknown stage '" + stage + "'");
}

json load_manifest(const fs::path& out) {
  const fs::path p = out / kManifest;
  if (!fs::exists(p)) return json::object();
  return read_json(p);
}

std::string relative_name(const fs::path& p, const fs::path& out) {
  const auto rel = p.lexically_relative(out);
  return !rel.empty() && *rel.begin() != ".." ? rel.generic_string() : p.generic_string();
}

void log_line(const Context& c, const std::string& s) {
  if (c.options.log) *c.options.log << s << '\n';
}

std::vector<std::string> execute(const std::string& stage, const Context& c) {
  const auto& k = c.config;
  const fs::path o = c.out;
  if (stage == "synth") {
    if (!k.synth) return {};
    const SynthOutput s = synth_data(*k.synth, stage_seed(k.seed, "synth"));
    save_synth(o / "synth", s, *k.synth);
    return {"synth/data.csv", "synth/truth.json"};
  }
  if (stage == "estimate") {
    const ObservationalData data = load_data(c);
    const PropensitySpec ps = k.propensity ? PropensitySpec::fixed(*k.propensity) : PropensitySpec::estimated();
    const std::uint64_t seed = stage_seed(k.seed, "estimate");
    const NuisanceModels nm = fit_nuisance(data, k.folds, ps, seed);
    RewardTable rt = doubly_robust_rewards(data, nm);
    if (k.compliance) rt = estimate_compliance(data, std::move(rt), k.folds, seed);
    save_reward_table(o / "rewards.csv", rt);
    write_json(o / "estimate.json", {{"rows", data.size()},
                                     {"mean_reward", rt.r_hat.mean()},
                                     {"ridge_fallback", nm.ridge_fallback_used},
                                     {"degenerate_compliance", rt.degenerate_compliance}});
    return {"rewards.csv", "estimate.json"};
  }
  if (stage == "cluster") {
    const ObservationalData data = load_data(c);
    const ClusterAssignment a = k.clusters == 1 ? ClusterAssignment::single(data.size(), data.x)
                                                : cluster_covariates(data.x, k.clusters, stage_seed(k.seed, "cluster"));
    save_clusters(o / "clusters.csv", a);
    return {"clusters.csv"};
  }
  if (stage == "rates") {
    const ObservationalData data = load_data(c);
    const ClusterAssignment a = load_clusters(o / "clusters.csv", data.x);
    RateModel m;
    if (data.arrival_time) {
      PoissonFitOptions po;
      po.bins = k.rate_bins;
      po.exposure = k.rate_exposure;
      po.period = 1.0;
      po.reference_time = std::fmod(k.env.t0, 1.0);
      m = fit_poisson_rates(a, *data.arrival_time, po);
      m.period = k.env.period;
    } else {
      log_line(c, "rates: no arrival_time column; using constant rates");
      m = RateModel::constant(a.k);
      m.period = k.env.period;
    }
    save_rate_model(o / "rates.json", m);
    return {"rates.json"};
  }
  if (stage == "ewm") {
    const PreparedEnv env = build_env(c);
    const auto& in = *env.inputs;
    EwmOptions eo;
    eo.directions = k.ewm_directions;
    eo.seed = stage_seed(k.seed, "ewm");
    const EwmResult r = ewm_search(in.rewards, in.data, env.treatable_share, FeatureSpec::preset("static", in.data.dim()), eo);
    write_json(o / "ewm_policy.json", {{"policy", r.params},
                                       {"welfare", r.welfare},
                                       {"share_treated", r.share_treated},
                                       {"budget_fraction", env.treatable_share},
                                       {"rule", to_deterministic(r.params).expression()}});
    return {"ewm_policy.json"};
  }
  if (stage == "train") {
    const PreparedEnv env = build_env(c);
    const Environment e(env.inputs);
    TrainConfig tc = k.train;
    tc.log_progress = tc.log_progress || c.options.log != nullptr;
    const TrainedPolicy t = train_a3c(tc, e, PolicyParams::zeros(k.feature_spec(env.inputs->data.dim())),
                                      ValueWeights::zeros(k.basis_spec()));
    json j = t;
    j["env"] = env.inputs->config;
    write_json(o / "policy.json", j);
    save_curve(o / "curve.csv", t.curve);
    if (t.status == "diverged") throw DivergenceError("train: " + t.message);
    if (t.status == "failed") throw Error("train: " + t.message);
    return {"policy.json", "curve.csv"};
  }
  const PreparedEnv env = build_env(c);
  const Environment e(env.inputs);
  const PolicyParams dyn = load_policy(o / "policy.json");
  EvalOptions eo;
  eo.episodes = k.eval_episodes;
  eo.seed = stage_seed(k.seed, "evaluate");
  if (stage == "evaluate") {
    write_json(o / "eval_report.json", {{"stochastic", evaluate_welfare(EvalPolicy::stochastic(dyn), e, eo)},
                                        {"threshold", evaluate_welfare(EvalPolicy::threshold(dyn), e, eo)}});
    return {"eval_report.json"};
  }
  if (stage == "compare") {
    const PolicyParams ewm = load_policy(o / "ewm_policy.json");
    write_json(o / "compare.json",
               {{"dynamic_vs_ewm", compare(EvalPolicy::stochastic(dyn), EvalPolicy::threshold(ewm), e, eo)},
                {"threshold_vs_ewm", compare(EvalPolicy::threshold(dyn), EvalPolicy::threshold(ewm), e, eo)},
                {"threshold_vs_softmax", compare(EvalPolicy::threshold(dyn), EvalPolicy::stochastic(dyn), e, eo)}});
    return {"compare.json"};
  }
  if (stage == "selectivity") {
    const SelectivityReport r = selectivity_stats(EvalPolicy::stochastic(dyn), e, k.selectivity_sims,
                                                  stage_seed(k.seed, "selectivity"));
    write_json(o / "selectivity.json", r);
    return {"selectivity.json"};
  }
  throw ValidationError("unknown stage '" + stage + "'");
}

StageResult run_in_context(const std::string& stage, const Context& c) {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end())
    throw ValidationError("unknown stage '" + stage + "'");
  StageResult res;
  res.stage = stage;
  if (stage == "synth" && !c.config.synth) {
    res.skipped = true;
    return res;
  }
  fs::create_directories(c.out);
  json manifest = load_manifest(c.out);
  const StageDef def = describe(stage, c);

  // every input produced by an earlier stage must still match its recorded hash
  std::map<std::string, std::string> recorded;
  for (const auto& [name, entry] : manifest.items())
    if (entry.contains("outputs"))
      for (const auto& [file, h] : entry.at("outputs").items()) recorded[file] = h.get<std::string>();
  json inputs = json::object();
  for (const auto& p : def.inputs) {
    if (!fs::exists(p)) throw ValidationError("stage '" + stage + "': missing input " + p.string());
    const std::string name = relative_name(p, c.out);
    const std::string h = file_hash(p);
    const auto it = recorded.find(name);
    if (it != recorded.end() && it->second != h)
      throw HashMismatch("hash mismatch for " + p.string() + ": file changed since it was written");
    inputs[name] = h;
  }
  const std::string config_hash = file_hash_string(def.config.dump());

  if (!c.options.force && manifest.contains(stage)) {
    const auto& prev = manifest.at(stage);
    bool fresh = prev.value("inputs", json::object()) == inputs && prev.value("config", std::string()) == config_hash;
    if (fresh)
      for (const auto& [file, h] : prev.at("outputs").items()) {
        const fs::path p = c.out / file;
        if (!fs::exists(p)) {
          fresh = false;
          break;
        }
        if (file_hash(p) != h.get<std::string>())
          throw HashMismatch("hash mismatch for " + p.string() + ": file changed since it was written");
      }
    if (fresh) {
      res.skipped = true;
      for (const auto& [file, h] : prev.at("outputs").items()) res.outputs.push_back(file);
      log_line(c, "[" + stage + "] up to date");
      return res;
    }
  }

  log_line(c, "[" + stage + "] running");
  std::vector<std::string> outputs;
  try {
    outputs = execute(stage, c);
  } catch (const DivergenceError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError("stage '" + stage + "' failed: " + e.what());
  } catch (const HashMismatch&) {
    throw;
  } catch (const IoError& e) {
    throw IoError("stage '" + stage + "' failed: " + e.what());
  } catch (const std::exception& e) {
    throw Error("stage '" + stage + "' failed: " + e.what());
  }
  json out = json::object();
  for (const auto& f : outputs) out[f] = file_hash(c.out / f);
  manifest[stage] = {{"inputs", inputs}, {"config", config_hash}, {"outputs", out}};
  write_json(c.out / kManifest, manifest);
  res.outputs = outputs;
  return res;
}

}  // namespace

std::string file_hash_string(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(s)));
  return buf;
}

PreparedEnv prepare_env(const PipelineConfig& config, ObservationalData data, RewardTable rewards,
                        ClusterAssignment clusters, const RateModel& rates) {
  EnvConfig e = config.env;
  if (config.b_n_auto) {
    const double per_period = config.arrivals_per_period > 0 ? config.arrivals_per_period : static_cast<double>(data.size());
    e.b_n = std::max(1.0, per_period * rates.normalization);
  }
  const double budget = std::isfinite(e.z_lower) ? e.z0 - e.z_lower : e.z0;
  const double arrivals = expected_arrivals(rates, e, e.b_n);
  if (config.budget_share > 0) e.cost = budget / (config.budget_share * arrivals);
  PreparedEnv b;
  b.treatable_share = std::min(1.0, e.cost > 0 ? budget / (e.cost * arrivals) : 1.0);
  b.inputs = EnvInputs::create(e, std::move(data), std::move(rewards), std::move(clusters), ForecastEnsemble::single(rates));
  return b;
}

StageResult run_stage(const std::string& stage, const PipelineConfig& config, const RunOptions& options) {
  return run_in_context(stage, make_context(config, options));
}

std::vector<StageResult> run_pipeline(const PipelineConfig& config, const RunOptions& options) {
  const Context c = make_context(config, options);
  std::vector<StageResult> results;
  for (const auto& s : kStages) results.push_back(run_in_context(s, c));
  return results;
}

StageResult run_dp_solve(const PipelineConfig& config, const RunOptions& options, std::size_t time_steps) {
  const Context c = make_context(config, options);
  for (const char* s : {"synth", "estimate", "cluster", "rates"}) run_in_context(s, c);
  const PreparedEnv env = build_env(c);
  const fs::path trained = c.out / "policy.json";
  const PolicyParams p = fs::exists(trained) ? load_policy(trained)
                                             : PolicyParams::zeros(c.config.feature_spec(env.inputs->data.dim()));
  DpOptions o;
  o.time_steps = time_steps;
  const GridValue g = solve_dp_value(p, *env.inputs, o);
  save_grid_value(c.out / "dp_grid.csv", g);
  write_json(c.out / "dp_summary.json", {{"value_at_start", dp_value_at_start(p, *env.inputs, o)},
                                         {"max_residual", g.max_residual},
                                         {"z_nodes", g.z.size()},
                                         {"t_nodes", g.t.size()},
                                         {"policy", p}});
  StageResult r;
  r.stage = "dp-solve";
  r.outputs = {"dp_grid.csv", "dp_summary.json"};
  return r;
}

}  // namespace dyntreat
