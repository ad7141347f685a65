#include "dyntreat/actor_critic.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

namespace dyntreat {

std::string to_string(UpdateMode m) {
  switch (m) {
    case UpdateMode::lock_per_batch: return "lock_per_batch";
    case UpdateMode::hogwild: return "hogwild";
    case UpdateMode::single_writer: return "single_writer";
  }
  return "?";
}

UpdateMode parse_update_mode(std::string_view s) {
  if (s == "lock_per_batch") return UpdateMode::lock_per_batch;
  if (s == "hogwild") return UpdateMode::hogwild;
  if (s == "single_writer") return UpdateMode::single_writer;
  throw ValidationError("unknown update mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw ValidationError("train: " + m); };
  if (!(alpha_theta >= 0) || !std::isfinite(alpha_theta)) bad("alpha_theta must be non-negative");
  if (!(alpha_v >= 0) || !std::isfinite(alpha_v)) bad("alpha_v must be non-negative");
  if (batch_size < 1) bad("batch_size must be at least 1");
  if (workers < 1) bad("workers must be at least 1");
  if (max_updates == 0 && max_episodes == 0) bad("set max_updates or max_episodes");
  if (eval_episodes < 1) bad("eval_episodes must be at least 1");
  if (clip_norm < 0) bad("clip_norm must be non-negative");
  if (!(divergence_threshold > 0)) bad("divergence_threshold must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"alpha_theta", c.alpha_theta},   {"alpha_v", c.alpha_v},
                     {"batch_size", c.batch_size},     {"workers", c.workers},
                     {"max_updates", c.max_updates},   {"max_episodes", c.max_episodes},
                     {"eval_every", c.eval_every},     {"eval_episodes", c.eval_episodes},
                     {"seed", c.seed},                 {"clip_norm", c.clip_norm},
                     {"divergence_threshold", c.divergence_threshold},
                     {"mode", to_string(c.mode)},      {"log_progress", c.log_progress}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.alpha_theta = j.value("alpha_theta", d.alpha_theta);
  c.alpha_v = j.value("alpha_v", d.alpha_v);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.workers = j.value("workers", d.workers);
  c.max_updates = j.value("max_updates", d.max_updates);
  c.max_episodes = j.value("max_episodes", d.max_episodes);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.eval_episodes = j.value("eval_episodes", d.eval_episodes);
  c.seed = j.value("seed", d.seed);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.divergence_threshold = j.value("divergence_threshold", d.divergence_threshold);
  c.mode = j.contains("mode") ? parse_update_mode(j.at("mode").get<std::string>()) : d.mode;
  c.log_progress = j.value("log_progress", d.log_progress);
}

namespace {

std::string describe(const State& s) {
  std::ostringstream os;
  os << "row=" << s.row << " z=" << s.z << " t=" << s.t << " I=" << s.discount << " step=" << s.steps;
  return os.str();
}

struct StepOutcome {
  Transition tr;
  double delta = 0;
};

// One decision with the update terms added into the buffers:
//   dtheta += alpha_theta I delta grad log pi(a | s),  dnu += alpha_v delta phi(s).
StepOutcome learning_step(const Environment& env, const State& s, const PolicyParams& params,
                          const ValueWeights& weights, const TrainConfig& config, Rng& rng, Eigen::VectorXd& dtheta,
                          Eigen::VectorXd& dnu) {
  const StateView v = env.view(s);
  const double p = action_prob(params, v);
  const int a = rng.uniform() < p ? 1 : 0;
  StepOutcome out;
  out.tr = env.step(s, a, rng);
  const State& n = out.tr.next;
  out.delta = td_error(out.tr.reward, env.config().beta, out.tr.dt, !out.tr.terminal, weights, s.z, s.t, n.z, n.t);
  if (!std::isfinite(out.delta)) throw DivergenceError("non-finite TD error at " + describe(s));
  if (config.alpha_theta != 0.0) {
    const Eigen::VectorXd f = params.spec.evaluate(v);
    const double scale = config.alpha_theta * s.discount * out.delta * (static_cast<double>(a) - p);
    dtheta += scale * f;
  }
  if (config.alpha_v != 0.0) {
    const Eigen::VectorXd phi = basis(s.z, s.t, weights.spec);
    dnu += (config.alpha_v * out.delta) * phi;
  }
  return out;
}

void clip(Eigen::VectorXd& d, double norm) {
  if (norm <= 0) return;
  const double n = d.norm();
  if (n > norm) d *= norm / n;
}

bool diverged(const Eigen::VectorXd& theta, const Eigen::VectorXd& nu, double threshold) {
  if (!theta.allFinite() || !nu.allFinite()) return true;
  return theta.norm() > threshold || nu.norm() > threshold;
}

}  // namespace

EpisodeStats train_episode(const Environment& env, PolicyParams& params, ValueWeights& weights,
                           const TrainConfig& config, Rng& rng) {
  params.validate();
  EpisodeStats stats;
  State s = env.reset(rng);
  Eigen::VectorXd dtheta(params.theta.size());
  Eigen::VectorXd dnu(weights.nu.size());
  while (true) {
    dtheta.setZero();
    dnu.setZero();
    const StepOutcome o = learning_step(env, s, params, weights, config, rng, dtheta, dnu);
    clip(dtheta, config.clip_norm);
    params.theta += dtheta / 1.0;
    weights.nu += dnu / 1.0;
    if (!params.theta.allFinite() || !weights.nu.allFinite())
      throw DivergenceError("non-finite parameters after the update at " + describe(s));
    stats.welfare += s.discount * o.tr.reward;
    ++stats.length;
    if (o.tr.treated) ++stats.treatments;
    if (o.tr.ends_episode()) break;
    s = o.tr.next;
  }
  return stats;
}

namespace {

// Shared (theta, nu) with the three update disciplines.
class ParameterStore {
 public:
  ParameterStore(Eigen::VectorXd theta, Eigen::VectorXd nu, UpdateMode mode)
      : theta_(std::move(theta)), nu_(std::move(nu)), last_theta_(theta_), last_nu_(nu_), mode_(mode) {}

  void snapshot(Eigen::VectorXd& theta, Eigen::VectorXd& nu) {
    if (mode_ == UpdateMode::hogwild) {
      for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = std::atomic_ref<double>(theta_[i]).load(std::memory_order_relaxed);
      for (Eigen::Index i = 0; i < nu.size(); ++i) nu[i] = std::atomic_ref<double>(nu_[i]).load(std::memory_order_relaxed);
      return;
    }
    std::lock_guard lock(mu_);
    theta = theta_;
    nu = nu_;
  }

  // Adds the batch mean; returns the global update count after it, or 0 when
  // the update made the parameters diverge (they are then rolled back).
  std::size_t apply(const Eigen::VectorXd& dtheta, const Eigen::VectorXd& dnu, double threshold) {
    if (mode_ == UpdateMode::hogwild) {
      for (Eigen::Index i = 0; i < dtheta.size(); ++i) std::atomic_ref<double>(theta_[i]).fetch_add(dtheta[i], std::memory_order_relaxed);
      for (Eigen::Index i = 0; i < dnu.size(); ++i) std::atomic_ref<double>(nu_[i]).fetch_add(dnu[i], std::memory_order_relaxed);
      std::lock_guard lock(mu_);
      Eigen::VectorXd th(theta_.size()), nv(nu_.size());
      for (Eigen::Index i = 0; i < th.size(); ++i) th[i] = std::atomic_ref<double>(theta_[i]).load(std::memory_order_relaxed);
      for (Eigen::Index i = 0; i < nv.size(); ++i) nv[i] = std::atomic_ref<double>(nu_[i]).load(std::memory_order_relaxed);
      if (diverged(th, nv, threshold)) return 0;
      last_theta_ = th;
      last_nu_ = nv;
      return ++updates_;
    }
    std::lock_guard lock(mu_);
    theta_ += dtheta;
    nu_ += dnu;
    if (diverged(theta_, nu_, threshold)) return 0;
    last_theta_ = theta_;
    last_nu_ = nu_;
    return ++updates_;
  }

  // Last parameters that passed the divergence check.
  void last_good(Eigen::VectorXd& theta, Eigen::VectorXd& nu) {
    std::lock_guard lock(mu_);
    theta = last_theta_;
    nu = last_nu_;
  }

  std::size_t updates() {
    std::lock_guard lock(mu_);
    return updates_;
  }

 private:
  Eigen::VectorXd theta_, nu_;
  Eigen::VectorXd last_theta_, last_nu_;
  UpdateMode mode_;
  std::size_t updates_ = 0;
  std::mutex mu_;
};

struct Worker {
  Rng rng;
  State state;
  bool fresh = true;  // next step starts an episode
  Eigen::VectorXd dtheta, dnu;
  std::size_t pending = 0;
  double welfare = 0;
};

enum class Stop { none, limit, diverged, failed };

struct Shared {
  ParameterStore store;
  const TrainConfig& config;
  const Environment& env;
  PolicyParams proto;
  ValueWeights proto_value;
  std::atomic<std::size_t> episodes{0};
  std::atomic<int> stop{0};
  std::mutex curve_mu;
  std::vector<CurvePoint> curve;
  std::string message;
  std::uint64_t eval_seed;

  Shared(const TrainConfig& c, const Environment& e, PolicyParams p, ValueWeights v)
      : store(p.theta, v.nu, c.mode), config(c), env(e), proto(std::move(p)), proto_value(std::move(v)),
        eval_seed(mix64(c.seed ^ hash_string("train-eval"))) {}

  void halt(Stop why, const std::string& msg) {
    int expected = 0;
    if (stop.compare_exchange_strong(expected, static_cast<int>(why))) {
      std::lock_guard lock(curve_mu);
      message = msg;
    }
  }

  void evaluate(std::size_t update_index, const Eigen::VectorXd& theta, bool parallel) {
    PolicyParams p = proto;
    p.theta = theta;
    EvalOptions o;
    o.episodes = config.eval_episodes;
    o.seed = eval_seed;
    o.parallel = parallel;
    const EvalReport r = evaluate_welfare(EvalPolicy::stochastic(p), env, o);
    CurvePoint pt;
    pt.update_index = update_index;
    pt.episodes = episodes.load();
    pt.mean_welfare = r.mean_welfare;
    pt.ci_halfwidth = r.ci_halfwidth;
    pt.relative_welfare = r.relative_welfare;
    pt.theta_norm = theta.norm();
    std::lock_guard lock(curve_mu);
    curve.push_back(pt);
    if (config.log_progress)
      std::cerr << "update " << pt.update_index << " episodes " << pt.episodes << " welfare " << pt.mean_welfare
                << " relative " << pt.relative_welfare << '\n';
  }
};

// One step of worker w against a fresh snapshot. Returns true after a flush
// that was accepted; the update index is written to *index.
bool worker_step(Shared& sh, Worker& w, PolicyParams& local, ValueWeights& local_value, std::size_t* index) {
  const auto& cfg = sh.config;
  if (w.fresh) {
    if (cfg.max_episodes > 0 && sh.episodes.load() >= cfg.max_episodes) {
      sh.halt(Stop::limit, "");
      return false;
    }
    w.state = sh.env.reset(w.rng);
    w.fresh = false;
    w.welfare = 0;
  }
  sh.store.snapshot(local.theta, local_value.nu);
  const StepOutcome o = learning_step(sh.env, w.state, local, local_value, cfg, w.rng, w.dtheta, w.dnu);
  w.welfare += w.state.discount * o.tr.reward;
  ++w.pending;
  const bool done = o.tr.ends_episode();
  if (done) {
    w.fresh = true;
    sh.episodes.fetch_add(1);
  } else {
    w.state = o.tr.next;
  }
  if (w.pending < cfg.batch_size && !done) return false;

  const double b = static_cast<double>(cfg.batch_size);
  Eigen::VectorXd dtheta = w.dtheta / b;
  const Eigen::VectorXd dnu = w.dnu / b;
  clip(dtheta, cfg.clip_norm);
  w.dtheta.setZero();
  w.dnu.setZero();
  w.pending = 0;
  const std::size_t u = sh.store.apply(dtheta, dnu, cfg.divergence_threshold);
  if (u == 0) {
    sh.halt(Stop::diverged, "parameters diverged (norm above " + csv::format(cfg.divergence_threshold) +
                                " or non-finite) near " + describe(o.tr.state));
    return false;
  }
  *index = u;
  if (cfg.max_updates > 0 && u >= cfg.max_updates) sh.halt(Stop::limit, "");
  return true;
}

}  // namespace

TrainedPolicy train_a3c(const TrainConfig& config, const Environment& env, PolicyParams init, ValueWeights init_value) {
  config.validate();
  init.validate();
  if (init.spec.required_covariates() > env.inputs().data.dim())
    throw ValidationError("train: policy needs more covariates than the data has");
  if (init_value.nu.size() != static_cast<Eigen::Index>(init_value.spec.dim()))
    throw ValidationError("train: value weights do not match their basis");
  const auto start = std::chrono::steady_clock::now();

  Shared sh(config, env, init, init_value);
  const std::size_t P = config.workers;
  std::vector<Worker> workers(P);
  for (std::size_t p = 0; p < P; ++p) {
    workers[p].rng = Rng::substream(config.seed, "train-worker", p);
    workers[p].dtheta = Eigen::VectorXd::Zero(init.theta.size());
    workers[p].dnu = Eigen::VectorXd::Zero(init_value.nu.size());
  }

  auto after_update = [&](std::size_t u, bool parallel_eval) {
    if (config.eval_every > 0 && u % config.eval_every == 0) {
      Eigen::VectorXd th, nv;
      sh.store.last_good(th, nv);
      sh.evaluate(u, th, parallel_eval);
    }
  };

  auto guarded = [&](auto&& body) {
    try {
      body();
    } catch (const DivergenceError& e) {
      sh.halt(Stop::diverged, e.what());
    } catch (const std::exception& e) {
      sh.halt(Stop::failed, e.what());
    }
  };

  if (config.mode == UpdateMode::single_writer || P == 1) {
    PolicyParams local = init;
    ValueWeights local_value = init_value;
    guarded([&] {
      while (sh.stop.load() == 0) {
        for (std::size_t p = 0; p < P && sh.stop.load() == 0; ++p) {
          std::size_t u = 0;
          if (worker_step(sh, workers[p], local, local_value, &u)) after_update(u, true);
        }
      }
    });
  } else {
#pragma omp parallel for num_threads(static_cast<int>(P)) schedule(static, 1)
    for (std::size_t p = 0; p < P; ++p) {
      PolicyParams local = init;
      ValueWeights local_value = init_value;
      guarded([&] {
        while (sh.stop.load() == 0) {
          std::size_t u = 0;
          if (worker_step(sh, workers[p], local, local_value, &u)) after_update(u, false);
        }
      });
    }
  }

  TrainedPolicy out;
  out.config = config;
  out.policy = init;
  out.value = init_value;
  sh.store.last_good(out.policy.theta, out.value.nu);
  out.updates = sh.store.updates();
  out.episodes = sh.episodes.load();
  const auto why = static_cast<Stop>(sh.stop.load());
  if (why == Stop::diverged) out.status = "diverged";
  else if (why == Stop::failed) out.status = "failed";
  out.message = sh.message;
  if (out.ok() && (sh.curve.empty() || sh.curve.back().update_index != out.updates))
    sh.evaluate(out.updates, out.policy.theta, true);
  std::sort(sh.curve.begin(), sh.curve.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.update_index < b.update_index; });
  // episodes counters are read racily in threaded mode; keep the curve monotone
  for (std::size_t i = 1; i < sh.curve.size(); ++i)
    sh.curve[i].episodes = std::max(sh.curve[i].episodes, sh.curve[i - 1].episodes);
  out.curve = std::move(sh.curve);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void to_json(nlohmann::json& j, const TrainedPolicy& t) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& c : t.curve)
    curve.push_back({{"update_index", c.update_index},
                     {"episodes", c.episodes},
                     {"mean_welfare", c.mean_welfare},
                     {"ci_halfwidth", c.ci_halfwidth},
                     {"relative_welfare", c.relative_welfare},
                     {"theta_norm", c.theta_norm}});
  j = nlohmann::json{{"status", t.status},   {"message", t.message}, {"policy", t.policy},
                     {"value", t.value},     {"updates", t.updates}, {"episodes", t.episodes},
                     {"config", t.config},   {"curve", curve}};
}

void from_json(const nlohmann::json& j, TrainedPolicy& t) {
  t.status = j.value("status", std::string("ok"));
  t.message = j.value("message", std::string());
  t.policy = j.at("policy").get<PolicyParams>();
  t.value = j.at("value").get<ValueWeights>();
  t.updates = j.value("updates", std::size_t{0});
  t.episodes = j.value("episodes", std::size_t{0});
  if (j.contains("config")) t.config = j.at("config").get<TrainConfig>();
  t.curve.clear();
  if (j.contains("curve"))
    for (const auto& c : j.at("curve")) {
      CurvePoint p;
      p.update_index = c.at("update_index").get<std::size_t>();
      p.episodes = c.at("episodes").get<std::size_t>();
      p.mean_welfare = c.at("mean_welfare").get<double>();
      p.ci_halfwidth = c.at("ci_halfwidth").get<double>();
      p.relative_welfare = c.value("relative_welfare", 0.0);
      p.theta_norm = c.value("theta_norm", 0.0);
      t.curve.push_back(p);
    }
}

GradientEstimate policy_gradient_estimate(const Environment& env, const PolicyParams& params,
                                          const ValueWeights& weights, std::size_t n_steps, Rng& rng) {
  params.validate();
  GradientEstimate g;
  g.per_episode = Eigen::VectorXd::Zero(params.theta.size());
  TrainConfig frozen;
  frozen.alpha_theta = 1.0;
  frozen.alpha_v = 0.0;
  Eigen::VectorXd dtheta = Eigen::VectorXd::Zero(params.theta.size());
  Eigen::VectorXd dnu = Eigen::VectorXd::Zero(weights.nu.size());
  while (g.steps < n_steps || g.episodes == 0) {
    State s = env.reset(rng);
    while (true) {
      const StepOutcome o = learning_step(env, s, params, weights, frozen, rng, dtheta, dnu);
      ++g.steps;
      if (o.tr.ends_episode()) break;
      s = o.tr.next;
    }
    ++g.episodes;
  }
  g.per_episode = dtheta / static_cast<double>(g.episodes);
  return g;
}

ValueWeights td_evaluate(const Environment& env, const PolicyParams& params, ValueWeights weights,
                         const TdOptions& options, Rng& rng) {
  params.validate();
  const auto& c = env.config();
  TrainConfig critic;
  critic.alpha_theta = 0.0;
  critic.alpha_v = options.alpha_v;
  Eigen::VectorXd dtheta = Eigen::VectorXd::Zero(params.theta.size());
  Eigen::VectorXd dnu(weights.nu.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(weights.nu.size());
  std::size_t averaged = 0;
  const double t_hi = c.periodic_time() || !std::isfinite(c.horizon) ? c.t0 + c.period : c.horizon;
  const bool z_box = std::isfinite(c.z_lower);
  for (std::size_t e = 0; e < options.episodes; ++e) {
    State s;
    if (options.exploring_starts) {
      double z = z_box ? c.z_lower + (c.z0 - c.z_lower) * (1.0 - rng.uniform()) : c.z0 * rng.uniform();
      if (options.z_step > 0) {
        const double lo = z_box ? c.z_lower : 0.0;
        const auto levels = static_cast<std::size_t>(std::floor((c.z0 - lo) / options.z_step + 1e-9)) + 1;
        z = c.z0 - static_cast<double>(rng.index(levels)) * options.z_step;
      }
      const double t = c.t0 + (t_hi - c.t0) * rng.uniform();
      s = env.reset_at(z, t, rng);
    } else {
      s = env.reset(rng);
    }
    if (!env.is_terminal(s)) {
      while (true) {
        dnu.setZero();
        const StepOutcome o = learning_step(env, s, params, weights, critic, rng, dtheta, dnu);
        weights.nu += dnu;
        if (!weights.nu.allFinite()) throw DivergenceError("td_evaluate: non-finite value weights at " + describe(s));
        if (o.tr.ends_episode()) break;
        s = o.tr.next;
      }
    }
    if (options.average && 2 * e >= options.episodes) {
      sum += weights.nu;
      ++averaged;
    }
  }
  if (options.average && averaged > 0) weights.nu = sum / static_cast<double>(averaged);
  return weights;
}

void save_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "update_index,episodes,mean_welfare,ci_halfwidth,theta_norm\n";
  for (const auto& c : curve)
    out << c.update_index << ',' << c.episodes << ',' << csv::format(c.mean_welfare) << ','
        << csv::format(c.ci_halfwidth) << ',' << csv::format(c.theta_norm) << '\n';
}

}  // namespace dyntreat
