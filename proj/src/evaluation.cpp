#include "dyntreat/evaluation.hpp"

#include "dyntreat/error.hpp"

#include <algorithm>
#include <cmath>

namespace dyntreat {

namespace {

struct Moments {
  double mean = 0;
  double halfwidth = 0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  const auto n = static_cast<double>(v.size());
  if (v.empty()) return m;
  m.mean = pairwise_sum(v) / n;
  if (v.size() < 2) return m;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m.mean) * (v[i] - m.mean);
  const double var = pairwise_sum(sq) / (n - 1.0);
  m.halfwidth = 1.96 * std::sqrt(var / n);
  return m;
}

PolicyParams constant_policy(double logit) {
  PolicyParams p = PolicyParams::zeros(FeatureSpec({FeatureTerm{}}));
  p.theta[0] = logit;
  return p;
}

std::vector<EpisodeOutcome> run_episodes(const EvalPolicy& policy, const Environment& env, std::size_t episodes,
                                         std::uint64_t seed, bool parallel) {
  std::vector<EpisodeOutcome> out(episodes);
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (std::size_t e = 0; e < episodes; ++e) out[e] = run_eval_episode(policy, env, seed, e);
  return out;
}

EvalReport summarize(const std::vector<EpisodeOutcome>& runs) {
  EvalReport r;
  r.episodes = runs.size();
  r.per_episode.resize(runs.size());
  std::vector<double> steps(runs.size()), treated(runs.size()), exhausted(runs.size());
  for (std::size_t e = 0; e < runs.size(); ++e) {
    r.per_episode[e] = runs[e].welfare;
    steps[e] = static_cast<double>(runs[e].steps);
    treated[e] = static_cast<double>(runs[e].treatments);
    exhausted[e] = runs[e].exhausted ? 1.0 : 0.0;
  }
  const Moments m = moments(r.per_episode);
  r.mean_welfare = m.mean;
  r.ci_halfwidth = m.halfwidth;
  const double total_steps = pairwise_sum(steps);
  r.treatment_share = total_steps > 0 ? pairwise_sum(treated) / total_steps : 0.0;
  r.exhaustion_rate = runs.empty() ? 0.0 : pairwise_sum(exhausted) / static_cast<double>(runs.size());
  r.mean_steps = runs.empty() ? 0.0 : total_steps / static_cast<double>(runs.size());
  return r;
}

// Ratio of means with a delta-method interval from the paired episodes.
void attach_relative(EvalReport& r, const EvalReport& baseline) {
  r.random_welfare = baseline.mean_welfare;
  if (baseline.mean_welfare == 0.0) return;
  const double ratio = r.mean_welfare / baseline.mean_welfare;
  r.relative_welfare = ratio;
  std::vector<double> d(r.per_episode.size());
  for (std::size_t e = 0; e < d.size(); ++e) d[e] = r.per_episode[e] - ratio * baseline.per_episode[e];
  r.relative_ci_halfwidth = moments(d).halfwidth / std::abs(baseline.mean_welfare);
}

}  // namespace

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

double EvalPolicy::probability(const StateView& s) const {
  if (deterministic) return params.index(s) > 0.0 ? 1.0 : 0.0;
  return action_prob(params, s);
}

int EvalPolicy::act(const StateView& s, double u) const {
  if (deterministic) return params.index(s) > 0.0 ? 1 : 0;
  return u < action_prob(params, s) ? 1 : 0;
}

EvalPolicy EvalPolicy::random() { return stochastic(constant_policy(0.0)); }
EvalPolicy EvalPolicy::treat_all() { return threshold(constant_policy(1.0)); }
EvalPolicy EvalPolicy::treat_none() { return threshold(constant_policy(-1.0)); }

EpisodeOutcome run_eval_episode(const EvalPolicy& policy, const Environment& env, std::uint64_t seed,
                                std::size_t episode) {
  Rng arrivals = Rng::substream(seed, "eval-arrivals", episode);
  Rng actions = Rng::substream(seed, "eval-actions", episode);
  const auto& c = env.config();
  EpisodeOutcome out;
  State s = env.reset(arrivals);
  while (true) {
    const double u = actions.uniform();
    const int a = policy.act(env.view(s), u);
    const Transition tr = env.step(s, a, arrivals);
    out.welfare += s.discount * tr.reward;
    ++out.steps;
    if (tr.treated) ++out.treatments;
    if (tr.ends_episode()) {
      out.exhausted = std::isfinite(c.z_lower) && tr.next.z < c.z_lower + c.cost;
      break;
    }
    s = tr.next;
  }
  return out;
}

EvalReport evaluate_welfare(const EvalPolicy& policy, const Environment& env, const EvalOptions& options) {
  if (options.episodes < 1) throw ValidationError("evaluate: episodes must be at least 1");
  EvalReport r = summarize(run_episodes(policy, env, options.episodes, options.seed, options.parallel));
  if (options.relative) {
    const EvalReport base = summarize(run_episodes(EvalPolicy::random(), env, options.episodes, options.seed, options.parallel));
    attach_relative(r, base);
  }
  return r;
}

PairedReport compare(const EvalPolicy& a, const EvalPolicy& b, const Environment& env, const EvalOptions& options) {
  if (options.episodes < 1) throw ValidationError("compare: episodes must be at least 1");
  if (a.params.spec.required_covariates() > env.inputs().data.dim() ||
      b.params.spec.required_covariates() > env.inputs().data.dim())
    throw ValidationError("compare: policy needs more covariates than the data has");
  PairedReport p;
  p.a = summarize(run_episodes(a, env, options.episodes, options.seed, options.parallel));
  p.b = summarize(run_episodes(b, env, options.episodes, options.seed, options.parallel));
  if (options.relative) {
    const EvalReport base = summarize(run_episodes(EvalPolicy::random(), env, options.episodes, options.seed, options.parallel));
    attach_relative(p.a, base);
    attach_relative(p.b, base);
  }
  std::vector<double> d(options.episodes);
  for (std::size_t e = 0; e < d.size(); ++e) d[e] = p.a.per_episode[e] - p.b.per_episode[e];
  const Moments m = moments(d);
  p.mean_difference = m.mean;
  p.ci_halfwidth = m.halfwidth;
  p.ratio = p.b.mean_welfare != 0.0 ? p.a.mean_welfare / p.b.mean_welfare : 0.0;
  return p;
}

SelectivityReport selectivity_stats(const EvalPolicy& policy, const Environment& env, std::size_t sims,
                                    std::uint64_t seed, bool parallel) {
  if (sims < 1) throw ValidationError("selectivity: sims must be at least 1");
  const auto& c = env.config();
  SelectivityReport rep;
  rep.sims = sims;
  rep.decile_low = std::isfinite(c.z_lower) ? c.z_lower : std::min(0.0, c.z0);
  rep.decile_high = c.z0;
  const double span = rep.decile_high - rep.decile_low;

  struct Event {
    int month;
    int decile;
    double rejections;
  };
  std::vector<std::vector<Event>> per_sim(sims);
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (std::size_t k = 0; k < sims; ++k) {
    Rng arrivals = Rng::substream(seed, "selectivity-arrivals", k);
    Rng actions = Rng::substream(seed, "selectivity-actions", k);
    State s = env.reset(arrivals);
    std::size_t rejected = 0;
    while (true) {
      const int a = policy.act(env.view(s), actions.uniform());
      const Transition tr = env.step(s, a, arrivals);
      if (tr.action == 1) {
        double phase = std::fmod((s.t - c.t0) / c.period, 1.0);
        if (phase < 0) phase += 1.0;
        const int month = std::min(11, static_cast<int>(phase * 12.0));
        int decile = span > 0 ? static_cast<int>((s.z - rep.decile_low) / span * 10.0) : 9;
        decile = std::clamp(decile, 0, 9);
        per_sim[k].push_back({month, decile, static_cast<double>(rejected)});
        rejected = 0;
      } else {
        ++rejected;
      }
      if (tr.ends_episode()) break;
      s = tr.next;
    }
  }

  std::array<std::vector<double>, 12> by_month;
  std::array<std::vector<double>, 10> by_decile;
  std::vector<double> all;
  for (const auto& events : per_sim)
    for (const auto& ev : events) {
      by_month[static_cast<std::size_t>(ev.month)].push_back(ev.rejections);
      by_decile[static_cast<std::size_t>(ev.decile)].push_back(ev.rejections);
      all.push_back(ev.rejections);
    }
  rep.events = all.size();
  rep.mean_rejections = all.empty() ? 0.0 : pairwise_sum(all) / static_cast<double>(all.size());
  for (std::size_t m = 0; m < 12; ++m) {
    rep.month_events[m] = by_month[m].size();
    rep.month_mean[m] = by_month[m].empty() ? 0.0 : pairwise_sum(by_month[m]) / static_cast<double>(by_month[m].size());
  }
  for (std::size_t d = 0; d < 10; ++d) {
    rep.decile_events[d] = by_decile[d].size();
    rep.decile_mean[d] = by_decile[d].empty() ? 0.0 : pairwise_sum(by_decile[d]) / static_cast<double>(by_decile[d].size());
  }
  return rep;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"episodes", r.episodes},
                     {"mean_welfare", r.mean_welfare},
                     {"ci_halfwidth", r.ci_halfwidth},
                     {"random_welfare", r.random_welfare},
                     {"relative_welfare", r.relative_welfare},
                     {"relative_ci_halfwidth", r.relative_ci_halfwidth},
                     {"treatment_share", r.treatment_share},
                     {"exhaustion_rate", r.exhaustion_rate},
                     {"mean_steps", r.mean_steps},
                     {"per_episode", r.per_episode}};
}

void to_json(nlohmann::json& j, const PairedReport& r) {
  j = nlohmann::json{{"a", r.a},
                     {"b", r.b},
                     {"mean_difference", r.mean_difference},
                     {"ci_halfwidth", r.ci_halfwidth},
                     {"ratio", r.ratio}};
}

void to_json(nlohmann::json& j, const SelectivityReport& r) {
  j = nlohmann::json{{"sims", r.sims},
                     {"events", r.events},
                     {"mean_rejections", r.mean_rejections},
                     {"month_mean", r.month_mean},
                     {"month_events", r.month_events},
                     {"decile_mean", r.decile_mean},
                     {"decile_events", r.decile_events},
                     {"decile_low", r.decile_low},
                     {"decile_high", r.decile_high}};
}

}  // namespace dyntreat
