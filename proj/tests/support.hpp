// Shared fixtures for the unit, property and acceptance tests.
#pragma once

#include "dyntreat/arrivals.hpp"
#include "dyntreat/data.hpp"
#include "dyntreat/environment.hpp"
#include "dyntreat/nuisance.hpp"
#include "dyntreat/rng.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace dyntreat::testing {

/// n rows of standard normal covariates, a fair coin for W, arrival times
/// uniform on [0, 1), Y = 1 + x0 + W (0.5 + x1) + noise.
inline ObservationalData gaussian_data(std::size_t n, std::size_t d, Rng& rng) {
  ObservationalData data;
  data.y.resize(static_cast<Eigen::Index>(n));
  data.w.resize(n);
  data.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  data.arrival_time.emplace(n);
  for (std::size_t j = 0; j < d; ++j) data.covariate_names.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ie = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < d; ++j) data.x(ie, static_cast<Eigen::Index>(j)) = rng.normal();
    data.w[i] = rng.bernoulli(0.5) ? 1 : 0;
    const double x0 = data.x(ie, 0), x1 = d > 1 ? data.x(ie, 1) : 0.0;
    data.y[ie] = 1.0 + x0 + data.w[i] * (0.5 + x1) + 0.5 * rng.normal();
    (*data.arrival_time)[i] = rng.uniform();
  }
  return data;
}

inline RewardTable reward_table(Eigen::VectorXd r) {
  RewardTable t;
  t.r_hat = std::move(r);
  return t;
}

/// Rewards equal to the true effect of gaussian_data, 0.5 + x1.
inline RewardTable true_rewards(const ObservationalData& data) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    r[static_cast<Eigen::Index>(i)] = 0.5 + (data.dim() > 1 ? data.row(i)[1] : 0.0);
  return reward_table(std::move(r));
}

/// Arrival times on [0, period * periods) of the inhomogeneous Poisson process
/// with intensity c.at(t, period), by thinning.
inline std::vector<double> poisson_process(const RateCoefficients& c, double span, double period, Rng& rng) {
  const double peak = std::exp(c.b0 + std::hypot(c.b1, c.b2));
  std::vector<double> out;
  double t = 0;
  while (true) {
    t += rng.exponential(peak);
    if (t >= span) break;
    if (rng.uniform() * peak < c.at(t, period)) out.push_back(t);
  }
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

}  // namespace dyntreat::testing
