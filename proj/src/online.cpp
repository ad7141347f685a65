#include "dyntreat/online.hpp"

#include "dyntreat/actor_critic.hpp"
#include "dyntreat/error.hpp"

#include <algorithm>
#include <cmath>

namespace dyntreat {

void OnlineHistory::append(std::span<const double> xi, int a, double p, double yi, double zi, double ti) {
  if (dim == 0 && size() == 0) dim = xi.size();
  if (xi.size() != dim) throw ValidationError("online history: covariate dimension changed");
  if (a != 0 && a != 1) throw ValidationError("online history: action must be 0 or 1");
  if (!(p > 0 && p < 1)) throw ValidationError("online history: propensity must lie in (0, 1)");
  x.insert(x.end(), xi.begin(), xi.end());
  action.push_back(a);
  propensity.push_back(p);
  y.push_back(yi);
  z.push_back(zi);
  t.push_back(ti);
}

ObservationalData OnlineHistory::as_data() const {
  ObservationalData d;
  const std::size_t n = size();
  d.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  d.w = action;
  d.x = Eigen::Map<const RowMatrix>(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < dim; ++j) d.covariate_names.push_back("x" + std::to_string(j));
  d.standardization.mean.assign(dim, 0.0);
  d.standardization.sd.assign(dim, 1.0);
  return d;
}

RewardTable online_rewards(const OnlineHistory& history) {
  const ObservationalData d = history.as_data();
  d.validate();
  const std::size_t n = d.size();
  std::vector<std::size_t> arm[2];
  for (std::size_t i = 0; i < n; ++i) arm[d.w[i]].push_back(i);
  LinearFit fit[2];
  for (int a = 0; a < 2; ++a) {
    const auto& rows = arm[a];
    if (rows.empty()) {
      fit[a].coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(history.dim + 1));
      continue;
    }
    RowMatrix xa(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(history.dim));
    Eigen::VectorXd ya(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      xa.row(static_cast<Eigen::Index>(r)) = d.x.row(static_cast<Eigen::Index>(rows[r]));
      ya[static_cast<Eigen::Index>(r)] = d.y[static_cast<Eigen::Index>(rows[r])];
    }
    fit[a] = fit_ols(xa, ya);
  }
  RewardTable t;
  t.r_hat.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = d.row(i);
    const double p = std::clamp(history.propensity[i], kPropensityClamp, 1.0 - kPropensityClamp);
    t.r_hat[static_cast<Eigen::Index>(i)] =
        aipw_score(d.y[static_cast<Eigen::Index>(i)], d.w[i], fit[0].predict(xi), fit[1].predict(xi), p);
  }
  return t;
}

OnlineDecision online_decision_step(const OnlineHistory& history, const StateView& s, PolicyParams& params,
                                    ValueWeights& weights, const OnlineConfig& config, const EnvConfig& env,
                                    const RateModel& forecast, std::size_t step_index, Rng& rng) {
  params.validate();
  if (step_index < 1) throw ValidationError("online: step_index counts from 1");
  if (forecast.size() != 1) throw ValidationError("online: the forecast must have a single cluster");
  OnlineDecision out;
  if (history.size() < config.min_history) {
    out.probability = 0.5;
    out.action = rng.uniform() < 0.5 ? 1 : 0;
    return out;
  }

  const std::size_t last = history.size() - 1;
  const RewardTable rewards = online_rewards(history);
  const double last_reward = rewards.r_hat[static_cast<Eigen::Index>(last)];
  auto inputs = EnvInputs::create(env, history.as_data(), rewards, std::nullopt,
                                  ForecastEnsemble::single(forecast));
  const Environment sim(inputs);

  // re-estimate h for the current theta, warm-started from the previous weights
  TdOptions td;
  td.alpha_v = config.alpha_v;
  td.episodes = config.episodes_per_sweep;
  for (out.sweeps = 1; out.sweeps <= config.max_sweeps; ++out.sweeps) {
    const Eigen::VectorXd before = weights.nu;
    weights = td_evaluate(sim, params, std::move(weights), td, rng);
    if ((weights.nu - before).lpNorm<Eigen::Infinity>() < config.sweep_tolerance) break;
  }
  out.sweeps = std::min(out.sweeps, config.max_sweeps);

  // one actor step with the TD error of the previous decision
  const double alpha = config.schedule == OnlineSchedule::constant ? config.alpha_theta
                                                                    : config.alpha_theta / static_cast<double>(step_index);
  if (alpha != 0.0) {
    const std::span<const double> xp(history.x.data() + last * history.dim, history.dim);
    const StateView prev{xp, history.z[last], history.t[last]};
    const int a = history.action[last];
    const double reward = a == 1 ? last_reward / env.b_n : 0.0;
    const bool in_domain = !(env.boundary == Boundary::dirichlet && (s.z <= env.z_lower || s.t >= env.horizon));
    const double delta = td_error(reward, env.beta, s.t - prev.t, in_domain, weights, prev.z, prev.t, s.z, s.t);
    const double discount = std::exp(-env.beta * (prev.t - env.t0));
    const Eigen::VectorXd g = log_grad(params, prev, a);
    params.theta += alpha * discount * delta * g;
    if (!params.theta.allFinite()) throw DivergenceError("online: non-finite policy parameters");
    out.updated = true;
  }

  out.probability = action_prob(params, s);
  out.action = rng.uniform() < out.probability ? 1 : 0;
  return out;
}

}  // namespace dyntreat
