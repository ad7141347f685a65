#include "dyntreat/error.hpp"
#include "dyntreat/policy.hpp"
#include "dyntreat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dyntreat {

namespace {

struct Candidate {
  double welfare = 0;
  std::size_t treated = 0;
  double cut = 0;
  std::size_t direction = 0;
};

// Better welfare wins; ties go to the lower direction index so the result does
// not depend on how directions were split over threads.
bool better(const Candidate& a, const Candidate& b) {
  if (a.welfare != b.welfare) return a.welfare > b.welfare;
  return a.direction < b.direction;
}

Eigen::VectorXd direction(std::size_t m, std::uint64_t seed, std::size_t d) {
  Rng rng = Rng::substream(seed, "ewm-direction", d);
  Eigen::VectorXd u(static_cast<Eigen::Index>(m));
  do {
    for (auto& v : u) v = rng.normal();
  } while (u.norm() == 0.0);
  return u / u.norm();
}

// Best top-j rule along one direction, j <= cap, cutting only between distinct scores.
Candidate search_direction(const RowMatrix& f, const Eigen::VectorXd& r, const Eigen::VectorXd& u, std::size_t cap,
                           std::size_t d, std::vector<std::pair<double, double>>& buf) {
  const auto n = static_cast<std::size_t>(f.rows());
  Eigen::VectorXd s = f * u;
  buf.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = {s[static_cast<Eigen::Index>(i)], r[static_cast<Eigen::Index>(i)]};
  const std::size_t top = std::min(n, cap + 1);
  auto by_score = [](const auto& a, const auto& b) { return a.first > b.first; };
  if (top < n) std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(top), buf.end(), by_score);
  std::sort(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(top), by_score);
  // with top < n, buf[top] is no larger than any of the first top entries
  Candidate best{0.0, 0, buf.empty() ? 0.0 : buf[0].first + 1.0, d};
  double sum = 0;
  for (std::size_t j = 1; j <= std::min(cap, n); ++j) {
    sum += buf[j - 1].second;
    const bool last = j == n;
    const double next = last ? -std::numeric_limits<double>::infinity() : buf[j].first;
    if (!last && !(buf[j - 1].first > next)) continue;
    const double w = sum / static_cast<double>(n);
    if (w > best.welfare) best = {w, j, last ? buf[j - 1].first - 1.0 : 0.5 * (buf[j - 1].first + next), d};
  }
  return best;
}

}  // namespace

EwmResult ewm_search(const RewardTable& rewards, const ObservationalData& data, double budget_fraction,
                     const FeatureSpec& spec, const EwmOptions& options) {
  if (!spec.is_static()) throw ValidationError("ewm_search: spec must contain only constant and covariate terms");
  const auto& terms = spec.terms();
  auto const_it = std::find_if(terms.begin(), terms.end(), [](const FeatureTerm& t) { return t.kind == FeatureKind::constant; });
  if (const_it == terms.end()) throw ValidationError("ewm_search: spec needs a constant term");
  if (!(budget_fraction > 0 && budget_fraction <= 1)) throw ValidationError("ewm_search: budget fraction must lie in (0, 1]");
  const std::size_t n = data.size();
  if (rewards.size() != n) throw ValidationError("ewm_search: reward table does not match data");
  if (spec.required_covariates() > data.dim()) throw ValidationError("ewm_search: spec needs more covariates than the data has");

  std::vector<std::size_t> cov_terms;
  for (std::size_t k = 0; k < terms.size(); ++k)
    if (terms[k].kind == FeatureKind::covariate) cov_terms.push_back(k);
  const std::size_t m = cov_terms.size();
  RowMatrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k)
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = data.row(i)[terms[cov_terms[k]].index];

  // floor with a little slack so that e.g. 0.25 * 400 is not rounded down to 99
  const std::size_t cap = static_cast<std::size_t>(std::floor(budget_fraction * static_cast<double>(n) + 1e-9));
  const auto const_idx = static_cast<Eigen::Index>(const_it - terms.begin());

  EwmResult res;
  res.params = PolicyParams::zeros(spec);
  res.params.theta[const_idx] = -1.0;  // treat nobody
  if (cap == 0) return res;

  Candidate best{0.0, 0, 0.0, 0};
  std::size_t searched = 0;
  Eigen::VectorXd best_u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  if (m == 0) {
    const double total = rewards.r_hat.sum();
    if (cap >= n && total > 0) {
      best = {total / static_cast<double>(n), n, -1.0, 0};
    }
  } else {
    const std::size_t dirs = std::max<std::size_t>(1, options.directions);
    searched = dirs;
    if (options.parallel) {
#pragma omp parallel
      {
        Candidate local{0.0, 0, 0.0, 0};
        std::vector<std::pair<double, double>> buf;
#pragma omp for schedule(static)
        for (std::size_t d = 0; d < dirs; ++d) {
          Candidate c = search_direction(f, rewards.r_hat, direction(m, options.seed, d), cap, d, buf);
          if (c.treated > 0 && (local.treated == 0 || better(c, local))) local = c;
        }
#pragma omp critical
        if (local.treated > 0 && (best.treated == 0 || better(local, best))) best = local;
      }
    } else {
      std::vector<std::pair<double, double>> buf;
      for (std::size_t d = 0; d < dirs; ++d) {
        Candidate c = search_direction(f, rewards.r_hat, direction(m, options.seed, d), cap, d, buf);
        if (c.treated > 0 && (best.treated == 0 || better(c, best))) best = c;
      }
    }
    if (best.treated > 0 && !(best.welfare > 0)) best = {0.0, 0, 0.0, 0};
    if (best.treated > 0) best_u = direction(m, options.seed, best.direction);
  }
  res.directions_searched = searched;
  if (best.treated == 0) return res;
  res.params.theta[const_idx] = -best.cut;
  for (std::size_t k = 0; k < m; ++k) res.params.theta[static_cast<Eigen::Index>(cov_terms[k])] = best_u[static_cast<Eigen::Index>(k)];
  // report what the returned rule actually does on the data
  double w = 0;
  std::size_t treated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (res.params.index({data.row(i), 0.0, 0.0}) > 0) {
      w += rewards.r_hat[static_cast<Eigen::Index>(i)];
      ++treated;
    }
  }
  res.welfare = w / static_cast<double>(n);
  res.share_treated = static_cast<double>(treated) / static_cast<double>(n);
  return res;
}

}  // namespace dyntreat
