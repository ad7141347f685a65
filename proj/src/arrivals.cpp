#include "dyntreat/arrivals.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace dyntreat {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double l1(std::span<const double> a, const Eigen::VectorXd& b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[static_cast<Eigen::Index>(j)]);
  return s;
}

std::span<const double> row_span(const RowMatrix& x, std::size_t i) {
  return {x.data() + i * static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(x.cols())};
}

double median_of(std::vector<double>& v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

Eigen::VectorXd coordinate_median(const RowMatrix& x, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd med(x.cols());
  std::vector<double> col(rows.size());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (std::size_t k = 0; k < rows.size(); ++k) col[k] = x(static_cast<Eigen::Index>(rows[k]), j);
    med[j] = median_of(col);
  }
  return med;
}

void recompute_medians(const RowMatrix& x, ClusterAssignment& a) {
  auto members = a.members();
  for (std::size_t c = 0; c < a.k; ++c) a.medians[c] = coordinate_median(x, members[c]);
}

}  // namespace

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
  std::vector<std::vector<std::size_t>> m(k);
  for (std::size_t i = 0; i < label.size(); ++i) m[static_cast<std::size_t>(label[i])].push_back(i);
  return m;
}

ClusterAssignment ClusterAssignment::single(std::size_t n, const RowMatrix& x) {
  ClusterAssignment a;
  a.k = 1;
  a.label.assign(n, 0);
  a.medians.resize(1);
  recompute_medians(x, a);
  a.objective_history.push_back(kmedian_objective(x, a));
  return a;
}

double kmedian_objective(const RowMatrix& x, const ClusterAssignment& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.label.size(); ++i) s += l1(row_span(x, i), a.medians[static_cast<std::size_t>(a.label[i])]);
  return s;
}

ClusterAssignment cluster_covariates(const RowMatrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1) throw ValidationError("cluster_covariates: k must be at least 1");
  if (k > n) throw ValidationError("cluster_covariates: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  if (k == 1) return ClusterAssignment::single(n, x);

  Rng rng = Rng::substream(seed, "kmedian");
  ClusterAssignment a;
  a.k = k;
  a.medians.clear();
  // k-means++ style seeding with L1 distances
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::size_t first = rng.index(n);
  a.medians.push_back(x.row(static_cast<Eigen::Index>(first)).transpose());
  chosen[first] = 1;
  while (a.medians.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], l1(row_span(x, i), a.medians.back()));
      total += chosen[i] ? 0.0 : dist[i];
    }
    std::size_t pick = n;
    if (total > 0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        u -= dist[i];
        if (u < 0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n) {  // all remaining points coincide with a center, or rounding ran past the end
      std::vector<std::size_t> left;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) left.push_back(i);
      pick = left[rng.index(left.size())];
    }
    chosen[pick] = 1;
    a.medians.push_back(x.row(static_cast<Eigen::Index>(pick)).transpose());
  }

  a.label.assign(n, -1);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    std::vector<double> best_dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = l1(row_span(x, i), a.medians[0]);
      for (std::size_t c = 1; c < k; ++c) {
        double d = l1(row_span(x, i), a.medians[c]);
        if (d < bd) {
          bd = d;
          best = static_cast<int>(c);
        }
      }
      best_dist[i] = bd;
      if (a.label[i] != best) {
        a.label[i] = best;
        changed = true;
      }
    }
    // an empty cluster takes over the point farthest from its median
    std::vector<std::size_t> count(k, 0);
    for (int l : a.label) ++count[static_cast<std::size_t>(l)];
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (count[static_cast<std::size_t>(a.label[i])] > 1 && (far == n || best_dist[i] > best_dist[far])) far = i;
      --count[static_cast<std::size_t>(a.label[far])];
      a.label[far] = static_cast<int>(c);
      best_dist[far] = 0;
      count[c] = 1;
      changed = true;
    }
    a.objective_history.push_back(std::accumulate(best_dist.begin(), best_dist.end(), 0.0));
    recompute_medians(x, a);
    a.objective_history.push_back(kmedian_objective(x, a));
    if (!changed) break;
  }
  return a;
}

double RateCoefficients::at(double t, double period) const {
  const double phase = kTwoPi * (t - period * std::floor(t / period)) / period;
  return std::exp(b0 + b1 * std::sin(phase) + b2 * std::cos(phase));
}

void RateModel::cluster_probabilities(double t, std::span<double> out) const {
  double total = 0;
  for (std::size_t c = 0; c < clusters.size(); ++c) total += out[c] = cluster_rate(c, t);
  for (std::size_t c = 0; c < clusters.size(); ++c) out[c] /= total;
}

double RateModel::min_aggregate_rate() const {
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) m = std::min(m, aggregate_rate(*this, period * i / 1000.0));
  return m;
}

RateModel RateModel::constant(std::size_t clusters) {
  RateModel m;
  m.clusters.assign(clusters, RateCoefficients{-std::log(static_cast<double>(clusters)), 0, 0});
  return m;
}

double aggregate_rate(const RateModel& model, double t) {
  double s = 0;
  for (std::size_t c = 0; c < model.size(); ++c) s += model.cluster_rate(c, t);
  return s;
}

double integrated_rate(const RateModel& model, std::size_t nodes) {
  double s = 0;
  for (std::size_t i = 0; i < nodes; ++i) s += aggregate_rate(model, model.period * (i + 0.5) / nodes);
  return s / nodes;
}

RateModel fit_poisson_rates(const ClusterAssignment& assignment, std::span<const double> arrival_times,
                            const PoissonFitOptions& options, PoissonFitReport* report) {
  if (arrival_times.size() != assignment.label.size())
    throw ValidationError("fit_poisson_rates: one arrival time per row required");
  if (options.bins < 1 || !(options.period > 0)) throw ValidationError("fit_poisson_rates: bad binning");
  const std::size_t bins = options.bins;
  const double period = options.period;
  const double width = period / static_cast<double>(bins);
  const double exposure = options.exposure > 0 ? options.exposure : static_cast<double>(arrival_times.size());

  std::vector<Eigen::Vector3d> xb(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double phase = kTwoPi * (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
    xb[b] = Eigen::Vector3d(1.0, std::sin(phase), std::cos(phase));
  }

  RateModel model;
  model.period = period;
  if (report) *report = {};
  auto members = assignment.members();
  for (std::size_t c = 0; c < assignment.k; ++c) {
    const auto& rows = members[c];
    if (rows.size() < 3)
      throw ValidationError("fit_poisson_rates: cluster " + std::to_string(c + 1) + " has fewer than 3 arrivals");
    std::vector<double> counts(bins, 0.0);
    for (std::size_t i : rows) {
      const double t = arrival_times[i];
      if (!(t >= 0 && t < period)) throw ValidationError("fit_poisson_rates: arrival time outside [0, period)");
      counts[std::min(bins - 1, static_cast<std::size_t>(t / width))] += 1.0;
    }
    const double nc = static_cast<double>(rows.size());
    const double scale = exposure * width;
    auto loglik = [&](const Eigen::Vector3d& beta) {
      double ll = 0;
      for (std::size_t b = 0; b < bins; ++b) {
        const double eta = beta.dot(xb[b]);
        ll += counts[b] * eta - scale * std::exp(eta);
      }
      return ll;
    };
    Eigen::Vector3d beta(std::log(nc / (exposure * period)), 0.0, 0.0);
    double ll = loglik(beta);
    double gnorm = 0;
    std::size_t it = 0;
    for (; it <= options.max_iter; ++it) {
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
      for (std::size_t b = 0; b < bins; ++b) {
        const double mu = scale * std::exp(beta.dot(xb[b]));
        g += (counts[b] - mu) * xb[b];
        h += mu * xb[b] * xb[b].transpose();
      }
      gnorm = g.norm() / nc;
      if (gnorm < options.gradient_tol || it == options.max_iter) break;
      Eigen::Vector3d step = h.ldlt().solve(g);
      double s = 1.0;
      Eigen::Vector3d next = beta + step;
      double next_ll = loglik(next);
      while (!(next_ll >= ll - 1e-12 * std::abs(ll)) && s > 1e-10) {
        s *= 0.5;
        next = beta + s * step;
        next_ll = loglik(next);
      }
      beta = next;
      ll = next_ll;
    }
    if (report) {
      report->gradient_norm.push_back(gnorm);
      report->iterations.push_back(it);
    }
    if (!(gnorm < options.gradient_tol))
      throw Error("fit_poisson_rates: cluster " + std::to_string(c + 1) + " did not converge after " +
                  std::to_string(options.max_iter) + " iterations (gradient norm " + csv::format(gnorm) + ")");
    model.clusters.push_back({beta[0], beta[1], beta[2]});
  }
  if (options.normalize) {
    const double a = aggregate_rate(model, options.reference_time);
    for (auto& c : model.clusters) c.b0 -= std::log(a);
    model.normalization = a;
  }
  return model;
}

double sample_interarrival(const RateModel& model, double t, double b_n, double horizon, Rng& rng, bool* censored) {
  const double omega = rng.exponential(aggregate_rate(model, t));
  const double dt = omega / b_n;
  const double left = horizon - t;
  const bool cut = dt >= left;
  if (censored) *censored = cut;
  return cut ? left : dt;
}

int sample_cluster(const RateModel& model, double t, Rng& rng) {
  const std::size_t k = model.size();
  if (k == 1) return 0;
  double total = aggregate_rate(model, t);
  double u = rng.uniform() * total;
  for (std::size_t c = 0; c + 1 < k; ++c) {
    u -= model.cluster_rate(c, t);
    if (u < 0) return static_cast<int>(c);
  }
  return static_cast<int>(k - 1);
}

ArrivalDraw sample_arrival(const RateModel& model, double t, double b_n, double horizon, Rng& rng) {
  ArrivalDraw d;
  d.dt = sample_interarrival(model, t, b_n, horizon, rng, &d.censored);
  d.cluster = sample_cluster(model, t, rng);
  return d;
}

std::vector<double> covariate_weights(const RateModel& model, const ClusterAssignment& assignment, double t) {
  if (model.size() != assignment.k) throw ValidationError("covariate_weights: cluster count mismatch");
  std::vector<double> w(model.size());
  model.cluster_probabilities(t, w);
  return w;
}

ForecastEnsemble ForecastEnsemble::single(RateModel model) {
  ForecastEnsemble e;
  e.members.push_back(std::move(model));
  e.weights.push_back(1.0);
  return e;
}

void ForecastEnsemble::normalize() {
  if (members.empty() || members.size() != weights.size())
    throw ValidationError("forecast ensemble needs one weight per member and at least one member");
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("forecast ensemble weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw ValidationError("forecast ensemble weights sum to zero");
  for (double& w : weights) w /= total;
}

std::size_t draw_forecast(const ForecastEnsemble& ensemble, Rng& rng) {
  if (ensemble.members.empty()) throw ValidationError("draw_forecast: empty ensemble");
  if (ensemble.members.size() == 1) return 0;
  const double u = rng.uniform();
  double cum = 0;
  for (std::size_t i = 0; i < ensemble.weights.size(); ++i) {
    cum += ensemble.weights[i];
    if (u < cum) return i;
  }
  // rounding left u above the last cumulative weight: take the last member with weight
  for (std::size_t i = ensemble.weights.size(); i-- > 0;)
    if (ensemble.weights[i] > 0) return i;
  return 0;
}

void to_json(nlohmann::json& j, const RateModel& m) {
  j = nlohmann::json::object();
  j["clusters"] = nlohmann::json::array();
  for (const auto& c : m.clusters) j["clusters"].push_back({{"b0", c.b0}, {"b1", c.b1}, {"b2", c.b2}});
  j["normalization"] = m.normalization;
  j["period"] = m.period;
}

void from_json(const nlohmann::json& j, RateModel& m) {
  m = RateModel{};
  for (const auto& c : j.at("clusters")) m.clusters.push_back({c.at("b0").get<double>(), c.at("b1").get<double>(), c.at("b2").get<double>()});
  m.normalization = j.value("normalization", 1.0);
  m.period = j.value("period", 1.0);
  if (m.clusters.empty()) throw ValidationError("rate model has no clusters");
}

void save_rate_model(const std::filesystem::path& path, const RateModel& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

RateModel load_rate_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<RateModel>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_clusters(const std::filesystem::path& path, const ClusterAssignment& a) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "row_id,cluster\n";
  for (std::size_t i = 0; i < a.label.size(); ++i) out << i << ',' << a.label[i] + 1 << '\n';
}

ClusterAssignment load_clusters(const std::filesystem::path& path, const RowMatrix& x) {
  csv::Table t = csv::read_file(path);
  const int cc = t.column("cluster");
  if (cc < 0) throw ValidationError(path.string() + ": missing cluster column");
  if (t.rows.size() != static_cast<std::size_t>(x.rows()))
    throw ValidationError(path.string() + ": row count does not match the data");
  ClusterAssignment a;
  int kmax = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    double v = csv::parse_double(t.rows[i][cc], i + 1, "cluster");
    if (v < 1 || v != std::floor(v)) throw ValidationError(path.string() + ": bad cluster label in row " + std::to_string(i + 1));
    a.label.push_back(static_cast<int>(v) - 1);
    kmax = std::max(kmax, static_cast<int>(v));
  }
  a.k = static_cast<std::size_t>(kmax);
  a.medians.resize(a.k);
  for (const auto& m : a.members())
    if (m.empty()) throw ValidationError(path.string() + ": empty cluster");
  recompute_medians(x, a);
  a.objective_history.push_back(kmedian_objective(x, a));
  return a;
}

}  // namespace dyntreat
