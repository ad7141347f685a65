#include "dyntreat/environment.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace dyntreat {

std::string to_string(Boundary b) {
  switch (b) {
    case Boundary::dirichlet: return "dirichlet";
    case Boundary::periodic: return "periodic";
    case Boundary::neumann: return "neumann";
    case Boundary::periodic_neumann: return "periodic_neumann";
  }
  return "?";
}

Boundary parse_boundary(std::string_view s) {
  if (s == "dirichlet") return Boundary::dirichlet;
  if (s == "periodic") return Boundary::periodic;
  if (s == "neumann") return Boundary::neumann;
  if (s == "periodic_neumann") return Boundary::periodic_neumann;
  throw ValidationError("unknown boundary regime '" + std::string(s) + "'");
}

double EnvConfig::time_limit() const {
  if (!periodic_time() && std::isfinite(horizon)) return horizon;
  return t0 + max_periods * period;
}

double EnvConfig::income(double z, double t) const {
  double rho = income_rate;
  if (income_cos != 0.0) rho += income_cos * std::cos(2.0 * std::numbers::pi * t / period);
  return rho + interest * z;
}

double EnvConfig::truncation_error_bound() const {
  if (!periodic_time() && std::isfinite(horizon)) return 0.0;
  return std::exp(-beta * max_periods * period) / beta;
}

void EnvConfig::validate() const {
  auto bad = [](const std::string& m) { throw ValidationError("env: " + m); };
  if (!(b_n >= 1) || !std::isfinite(b_n)) bad("b_n must be at least 1");
  if (!std::isfinite(beta)) bad("beta must be finite");
  if (!std::isfinite(z0) || !std::isfinite(t0)) bad("z0 and t0 must be finite");
  if (!(cost >= 0) || !std::isfinite(cost)) bad("cost must be non-negative");
  if (!(period > 0) || !std::isfinite(period)) bad("period must be positive");
  if (!(max_periods > 0)) bad("max_periods must be positive");
  if (!(lattice_dt >= 0)) bad("lattice_dt must be non-negative");
  if (std::isnan(horizon) || std::isnan(z_lower) || horizon == -kInf || z_lower == kInf) bad("bad horizon or z_lower");
  if (!std::isfinite(income_rate) || !std::isfinite(income_cos) || !std::isfinite(interest)) bad("income terms must be finite");
  switch (boundary) {
    case Boundary::dirichlet:
      if (!std::isfinite(horizon) && !std::isfinite(z_lower)) bad("dirichlet needs a finite horizon or a finite z_lower");
      break;
    case Boundary::periodic:
      if (!(beta > 0)) bad("periodic regime needs beta > 0");
      break;
    case Boundary::neumann:
    case Boundary::periodic_neumann:
      if (!std::isfinite(z_lower)) bad("neumann regimes need a finite z_lower");
      if (!(boundary_flow > 0)) bad("neumann regimes need a boundary flow bounded away from 0");
      if (boundary == Boundary::periodic_neumann && !(beta > 0)) bad("periodic regime needs beta > 0");
      break;
  }
}

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"boundary", to_string(c.boundary)},
                     {"z0", c.z0},
                     {"t0", c.t0},
                     {"horizon", finite_or_null(c.horizon)},
                     {"z_lower", finite_or_null(c.z_lower)},
                     {"beta", c.beta},
                     {"b_n", c.b_n},
                     {"cost", c.cost},
                     {"income_rate", c.income_rate},
                     {"income_cos", c.income_cos},
                     {"interest", c.interest},
                     {"boundary_flow", c.boundary_flow},
                     {"period", c.period},
                     {"max_periods", c.max_periods},
                     {"lattice_dt", c.lattice_dt}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  EnvConfig d;
  auto num = [&](const char* key, double fallback, double if_null) {
    if (!j.contains(key)) return fallback;
    if (j.at(key).is_null()) return if_null;
    if (!j.at(key).is_number()) throw ValidationError(std::string("env: '") + key + "' must be a number");
    return j.at(key).get<double>();
  };
  c.boundary = j.contains("boundary") ? parse_boundary(j.at("boundary").get<std::string>()) : d.boundary;
  c.z0 = num("z0", d.z0, d.z0);
  c.t0 = num("t0", d.t0, d.t0);
  c.horizon = num("horizon", d.horizon, kInf);
  c.z_lower = num("z_lower", d.z_lower, -kInf);
  c.beta = num("beta", d.beta, d.beta);
  c.b_n = num("b_n", d.b_n, d.b_n);
  c.cost = num("cost", d.cost, d.cost);
  c.income_rate = num("income_rate", d.income_rate, 0.0);
  c.income_cos = num("income_cos", d.income_cos, 0.0);
  c.interest = num("interest", d.interest, 0.0);
  c.boundary_flow = num("boundary_flow", d.boundary_flow, 0.0);
  c.period = num("period", d.period, d.period);
  c.max_periods = num("max_periods", d.max_periods, d.max_periods);
  c.lattice_dt = num("lattice_dt", d.lattice_dt, 0.0);
}

std::shared_ptr<const EnvInputs> EnvInputs::create(EnvConfig config, ObservationalData data, RewardTable rewards,
                                                   std::optional<ClusterAssignment> clusters,
                                                   std::optional<ForecastEnsemble> forecasts,
                                                   std::vector<double> row_cost) {
  config.validate();
  data.validate();
  rewards.validate();
  const std::size_t n = data.size();
  if (rewards.size() != n) throw ValidationError("env: reward table has " + std::to_string(rewards.size()) + " rows, data has " + std::to_string(n));
  auto in = std::make_shared<EnvInputs>();
  in->config = config;
  in->clusters = clusters ? std::move(*clusters) : ClusterAssignment::single(n, data.x);
  if (in->clusters.label.size() != n) throw ValidationError("env: cluster labels do not match data");
  in->forecasts = forecasts ? std::move(*forecasts) : ForecastEnsemble::single(RateModel::constant(in->clusters.k));
  in->forecasts.normalize();
  for (const auto& m : in->forecasts.members) {
    if (m.size() != in->clusters.k) throw ValidationError("env: forecast cluster count does not match the clustering");
    if (!(m.min_aggregate_rate() > 0)) throw ValidationError("env: aggregate arrival rate is not bounded away from 0");
  }
  if (!row_cost.empty()) {
    if (row_cost.size() != n) throw ValidationError("env: one cost per row required");
    for (double c : row_cost)
      if (!(c >= 0) || !std::isfinite(c)) throw ValidationError("env: costs must be non-negative");
  }
  in->row_cost = std::move(row_cost);
  in->rows_by_cluster = in->clusters.members();
  for (const auto& m : in->rows_by_cluster)
    if (m.empty()) throw ValidationError("env: empty cluster");
  in->data = std::move(data);
  in->rewards = std::move(rewards);
  return in;
}

double EnvInputs::row_probability(std::size_t row, double t, std::size_t forecast) const {
  const auto& m = forecasts.members[forecast];
  const auto c = static_cast<std::size_t>(clusters.label[row]);
  return m.cluster_rate(c, t) / aggregate_rate(m, t) / static_cast<double>(rows_by_cluster[c].size());
}

Environment::Environment(std::shared_ptr<const EnvInputs> inputs) : inputs_(std::move(inputs)) {
  if (!inputs_) throw ValidationError("env: null inputs");
}

void Environment::draw_arrival(State& s, Rng& rng) const {
  const auto& in = *inputs_;
  const auto& model = in.forecasts.members[s.forecast];
  s.cluster = sample_cluster(model, s.t, rng);
  const auto& rows = in.rows_by_cluster[static_cast<std::size_t>(s.cluster)];
  s.row = rows.size() == 1 ? rows[0] : rows[rng.index(rows.size())];
  s.compliance = Compliance::complier;
  if (in.rewards.has_compliance()) {
    const auto r = static_cast<Eigen::Index>(s.row);
    const double u = rng.uniform();
    const double qc = (*in.rewards.q_c)[r];
    if (u >= qc) s.compliance = u < qc + (*in.rewards.q_a)[r] ? Compliance::always_taker : Compliance::never_taker;
  }
}

State Environment::reset(Rng& rng) const {
  const auto& c = config();
  return reset_at(c.z0, c.t0, rng);
}

State Environment::reset_at(double z, double t, Rng& rng) const {
  const auto& c = config();
  State s;
  s.forecast = draw_forecast(inputs_->forecasts, rng);
  s.z = z;
  s.t = t;
  s.discount = t == c.t0 ? 1.0 : std::exp(-c.beta * (t - c.t0));
  draw_arrival(s, rng);
  return s;
}

bool Environment::is_terminal(const State& s) const {
  const auto& c = config();
  switch (c.boundary) {
    case Boundary::dirichlet: return s.t >= c.horizon || s.z <= c.z_lower;
    case Boundary::neumann: return s.t >= c.horizon;
    case Boundary::periodic:
    case Boundary::periodic_neumann: return false;
  }
  return false;
}

bool Environment::can_treat(const State& s) const {
  const auto& c = config();
  if (c.reflecting() && s.z <= c.z_lower) return false;
  return s.z - inputs_->cost(s.row) >= c.z_lower;
}

double Environment::arrival_rate(const State& s) const {
  return aggregate_rate(inputs_->forecasts.members[s.forecast], s.t);
}

Transition Environment::step(const State& s, int action, Rng& rng) const {
  if (is_terminal(s)) throw ValidationError("env: step called on a terminal state");
  if (action != 0 && action != 1) throw ValidationError("env: action must be 0 or 1");
  const auto& c = config();
  const auto& in = *inputs_;
  Transition tr;
  tr.state = s;
  tr.requested_action = action;
  const bool feasible = can_treat(s);
  tr.action = feasible ? action : 0;
  const auto r = static_cast<Eigen::Index>(s.row);
  switch (s.compliance) {
    case Compliance::complier:
      tr.treated = tr.action == 1;
      if (tr.treated) tr.reward = (in.rewards.has_compliance() ? (*in.rewards.late)[r] : in.rewards.r_hat[r]) / c.b_n;
      break;
    case Compliance::always_taker: tr.treated = feasible; break;
    case Compliance::never_taker: tr.treated = false; break;
  }

  const double lambda = arrival_rate(s);
  State next = s;
  if (c.reflecting() && s.z <= c.z_lower) {
    next.z = c.z_lower + c.boundary_flow / (lambda * c.b_n);
  } else {
    double z = s.z;
    const double g = c.income(s.z, s.t);
    if (g != 0.0) z += g / (lambda * c.b_n);
    if (tr.treated) z -= in.cost(s.row);
    next.z = z < c.z_lower ? c.z_lower : z;
  }

  const double limit = c.time_limit();
  if (c.lattice_dt > 0) {
    tr.dt = c.lattice_dt;
    if (tr.dt >= limit - s.t - 1e-9 * c.lattice_dt) {
      tr.dt = limit - s.t;
      tr.censored = true;
    }
  } else {
    tr.dt = sample_interarrival(in.forecasts.members[s.forecast], s.t, c.b_n, limit, rng, &tr.censored);
  }
  next.t = tr.censored ? limit : s.t + tr.dt;
  next.discount = s.discount * std::exp(-c.beta * tr.dt);
  next.steps = s.steps + 1;
  tr.terminal = is_terminal(next);
  tr.truncated = !tr.terminal && next.t >= limit;
  if (!tr.ends_episode()) draw_arrival(next, rng);
  tr.next = next;
  return tr;
}

double episode_welfare(std::span<const Transition> trajectory, double beta, double t0) {
  double w = 0;
  for (const auto& tr : trajectory)
    if (tr.reward != 0.0) w += std::exp(-beta * (tr.state.t - t0)) * tr.reward;
  return w;
}

void save_trajectory(const std::filesystem::path& path, std::span<const Transition> trajectory) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,z,cluster,action,reward,I\n";
  for (const auto& tr : trajectory)
    out << csv::format(tr.state.t) << ',' << csv::format(tr.state.z) << ',' << tr.state.cluster + 1 << ','
        << tr.action << ',' << csv::format(tr.reward) << ',' << csv::format(tr.state.discount) << '\n';
}

}  // namespace dyntreat
