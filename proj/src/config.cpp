#include "dyntreat/config.hpp"

#include "dyntreat/error.hpp"

#include <fstream>
#include <set>

namespace dyntreat {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ValidationError("config: unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: bad value for '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

bool is_preset(const std::vector<std::string>& v, std::initializer_list<const char*> names) {
  if (v.size() != 1) return false;
  for (const char* n : names)
    if (v[0] == n) return true;
  return false;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "", {"version", "seed", "data", "synth", "estimate", "cluster", "rates", "env", "budget_share", "policy",
                     "value", "train", "ewm", "evaluate"});
  const int version = get<int>(j, "version", "", kConfigVersion);
  if (version != kConfigVersion)
    throw ValidationError("config: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kConfigVersion) + ")");
  PipelineConfig c;
  c.base_dir = base_dir;
  c.seed = get<std::uint64_t>(j, "seed", "", c.seed);

  if (j.contains("data") == j.contains("synth")) throw ValidationError("config: give exactly one of 'data' and 'synth'");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"path", "columns"});
    c.data_path = get<std::string>(d, "path", "data", "");
    if (c.data_path->empty()) throw ValidationError("config: 'data.path' is required");
    if (d.contains("columns")) {
      const auto& m = d.at("columns");
      check_keys(m, "data.columns", {"outcome", "treatment", "covariates", "arrival_time", "instrument"});
      c.columns.outcome = get<std::string>(m, "outcome", "data.columns", c.columns.outcome);
      c.columns.treatment = get<std::string>(m, "treatment", "data.columns", c.columns.treatment);
      c.columns.covariates = get<std::vector<std::string>>(m, "covariates", "data.columns", {});
      if (m.contains("arrival_time") && !m.at("arrival_time").is_null())
        c.columns.arrival_time = get<std::string>(m, "arrival_time", "data.columns", "");
      if (m.contains("instrument") && !m.at("instrument").is_null())
        c.columns.instrument = get<std::string>(m, "instrument", "data.columns", "");
    }
    if (c.columns.covariates.empty()) throw ValidationError("config: 'data.columns.covariates' is required");
  } else {
    try {
      c.synth = j.at("synth").get<SynthSpec>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config: bad 'synth' section: ") + e.what());
    }
    c.columns.covariates = c.synth->covariate_names;
    c.columns.arrival_time = "arrival_time";
    if (c.synth->always_takers > 0 || c.synth->never_takers > 0) c.columns.instrument = "z";
  }

  if (j.contains("estimate")) {
    const auto& e = j.at("estimate");
    check_keys(e, "estimate", {"folds", "propensity", "compliance"});
    c.folds = get<std::size_t>(e, "folds", "estimate", c.folds);
    if (e.contains("propensity")) {
      const auto& p = e.at("propensity");
      if (p.is_string() && p.get<std::string>() == "estimated") c.propensity.reset();
      else if (p.is_number()) c.propensity = p.get<double>();
      else throw ValidationError("config: 'estimate.propensity' must be a number or \"estimated\"");
    }
    c.compliance = get<bool>(e, "compliance", "estimate", c.compliance);
  }
  if (c.folds < 2) throw ValidationError("config: 'estimate.folds' must be at least 2");
  if (c.propensity && !(*c.propensity > 0 && *c.propensity < 1))
    throw ValidationError("config: 'estimate.propensity' must lie in (0, 1)");
  if (c.compliance && !c.columns.instrument) throw ValidationError("config: 'estimate.compliance' needs an instrument column");

  if (j.contains("cluster")) {
    check_keys(j.at("cluster"), "cluster", {"k"});
    c.clusters = get<std::size_t>(j.at("cluster"), "k", "cluster", c.clusters);
  }
  if (c.clusters < 1) throw ValidationError("config: 'cluster.k' must be at least 1");
  if (j.contains("rates")) {
    const auto& r = j.at("rates");
    check_keys(r, "rates", {"bins", "exposure", "arrivals_per_period"});
    c.rate_bins = get<std::size_t>(r, "bins", "rates", c.rate_bins);
    c.rate_exposure = get<double>(r, "exposure", "rates", c.rate_exposure);
    c.arrivals_per_period = get<double>(r, "arrivals_per_period", "rates", c.arrivals_per_period);
  }
  if (c.rate_bins < 1) throw ValidationError("config: 'rates.bins' must be at least 1");
  if (!(c.arrivals_per_period >= 0)) throw ValidationError("config: 'rates.arrivals_per_period' must be non-negative");

  if (j.contains("env")) {
    json e = j.at("env");
    check_keys(e, "env", {"boundary", "z0", "t0", "horizon", "z_lower", "beta", "b_n", "cost", "income_rate", "income_cos",
                          "interest", "boundary_flow", "period", "max_periods", "lattice_dt"});
    c.b_n_auto = !e.contains("b_n") || (e.at("b_n").is_string() && e.at("b_n").get<std::string>() == "auto");
    if (c.b_n_auto) e.erase("b_n");
    try {
      c.env = e.get<EnvConfig>();
    } catch (const json::exception& ex) {
      throw ValidationError(std::string("config: bad 'env' section: ") + ex.what());
    }
    if (e.contains("cost")) c.budget_share = 0;
  }
  c.budget_share = get<double>(j, "budget_share", "", c.budget_share);
  if (!(c.budget_share >= 0 && c.budget_share <= 1)) throw ValidationError("config: 'budget_share' must lie in [0, 1]");
  c.env.validate();

  if (j.contains("policy")) {
    check_keys(j.at("policy"), "policy", {"features"});
    c.policy_features = get<std::vector<std::string>>(j.at("policy"), "features", "policy", c.policy_features);
  }
  if (j.contains("value")) {
    check_keys(j.at("value"), "value", {"basis"});
    c.value_basis = get<std::vector<std::string>>(j.at("value"), "basis", "value", c.value_basis);
  }
  c.basis_spec();
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train", {"alpha_theta", "alpha_v", "batch_size", "workers", "max_updates", "max_episodes", "eval_every",
                            "eval_episodes", "seed", "clip_norm", "divergence_threshold", "mode", "log_progress"});
    try {
      c.train = t.get<TrainConfig>();
    } catch (const json::exception& ex) {
      throw ValidationError(std::string("config: bad 'train' section: ") + ex.what());
    }
  } else {
    c.train.max_updates = 100;
  }
  if (!j.contains("train") || !j.at("train").contains("seed")) c.train.seed = c.seed;
  c.train.validate();

  if (j.contains("ewm")) {
    check_keys(j.at("ewm"), "ewm", {"directions"});
    c.ewm_directions = get<std::size_t>(j.at("ewm"), "directions", "ewm", c.ewm_directions);
  }
  if (j.contains("evaluate")) {
    const auto& e = j.at("evaluate");
    check_keys(e, "evaluate", {"episodes", "selectivity_sims"});
    c.eval_episodes = get<std::size_t>(e, "episodes", "evaluate", c.eval_episodes);
    c.selectivity_sims = get<std::size_t>(e, "selectivity_sims", "evaluate", c.selectivity_sims);
  }
  if (c.ewm_directions < 1 || c.eval_episodes < 1 || c.selectivity_sims < 1)
    throw ValidationError("config: ewm directions, evaluation episodes and selectivity sims must be positive");
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

json PipelineConfig::to_json() const {
  json j;
  j["version"] = kConfigVersion;
  j["seed"] = seed;
  if (data_path) {
    json cols{{"outcome", columns.outcome}, {"treatment", columns.treatment}, {"covariates", columns.covariates}};
    cols["arrival_time"] = columns.arrival_time ? json(*columns.arrival_time) : json(nullptr);
    cols["instrument"] = columns.instrument ? json(*columns.instrument) : json(nullptr);
    j["data"] = {{"path", data_path->generic_string()}, {"columns", cols}};
  }
  if (synth) j["synth"] = *synth;
  j["estimate"] = {{"folds", folds},
                   {"propensity", propensity ? json(*propensity) : json("estimated")},
                   {"compliance", compliance}};
  j["cluster"] = {{"k", clusters}};
  j["rates"] = {{"bins", rate_bins}, {"exposure", rate_exposure}, {"arrivals_per_period", arrivals_per_period}};
  json e = env;
  if (b_n_auto) e["b_n"] = "auto";
  if (budget_share > 0) e.erase("cost");
  j["env"] = e;
  j["budget_share"] = budget_share;
  j["policy"] = {{"features", policy_features}};
  j["value"] = {{"basis", value_basis}};
  j["train"] = train;
  j["ewm"] = {{"directions", ewm_directions}};
  j["evaluate"] = {{"episodes", eval_episodes}, {"selectivity_sims", selectivity_sims}};
  return j;
}

FeatureSpec PipelineConfig::feature_spec(std::size_t covariate_dim) const {
  if (is_preset(policy_features, {"static", "dynamic", "dynamic_full"}))
    return FeatureSpec::preset(policy_features[0], covariate_dim);
  return FeatureSpec::parse(policy_features);
}

BasisSpec PipelineConfig::basis_spec() const {
  if (is_preset(value_basis, {"appendixE9", "appendixE11", "appendixE13"})) return BasisSpec::preset(value_basis[0]);
  return BasisSpec::parse(value_basis);
}

}  // namespace dyntreat
