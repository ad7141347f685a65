#include "dyntreat/nuisance.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"
#include "dyntreat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

namespace dyntreat {

namespace {

// Penalty of the logistic fits. Tiny, so that well-posed fits are unaffected,
// but enough to keep separable or single-class data finite.
constexpr double kLogitPenalty = 1e-8;

RowMatrix with_intercept(const RowMatrix& design) {
  RowMatrix a(design.rows(), design.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(design.cols()) = design;
  return a;
}

RowMatrix rows_of(const ObservationalData& data, const std::vector<std::size_t>& idx) {
  RowMatrix m(static_cast<Eigen::Index>(idx.size()), data.x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = data.x.row(static_cast<Eigen::Index>(idx[k]));
  return m;
}

Eigen::VectorXd values_of(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(idx[k])];
  return out;
}

}  // namespace

double LinearFit::predict(std::span<const double> x) const {
  double v = coef[0];
  for (std::size_t j = 0; j < x.size(); ++j) v += coef[static_cast<Eigen::Index>(j + 1)] * x[j];
  return v;
}

double logistic(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

LinearFit fit_ols(const RowMatrix& design, const Eigen::VectorXd& y) {
  const RowMatrix a = with_intercept(design);
  LinearFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (a.rows() >= a.cols() && qr.rank() == a.cols()) {
    fit.coef = qr.solve(y);
    return fit;
  }
  Eigen::MatrixXd g = a.transpose() * a;
  g.diagonal().array() += kRidgeFallback;
  fit.coef = g.ldlt().solve(a.transpose() * y);
  fit.ridge_fallback = true;
  return fit;
}

LinearFit fit_logit(const RowMatrix& design, const Eigen::VectorXd& y) {
  const RowMatrix a = with_intercept(design);
  const Eigen::Index k = a.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  auto objective = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = a * b;
    double ll = 0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      // log(1 + e^eta) computed without overflow
      double sp = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
      ll += y[i] * eta[i] - sp;
    }
    return ll - 0.5 * kLogitPenalty * b.squaredNorm();
  };
  double obj = objective(beta);
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd eta = a * beta;
    Eigen::VectorXd p = eta.unaryExpr([](double v) { return logistic(v); });
    Eigen::VectorXd grad = a.transpose() * (y - p) - kLogitPenalty * beta;
    Eigen::VectorXd wts = (p.array() * (1.0 - p.array())).matrix();
    Eigen::MatrixXd h = a.transpose() * wts.asDiagonal() * a;
    h.diagonal().array() += kLogitPenalty;
    Eigen::VectorXd step = h.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_obj = objective(next);
    while (next_obj < obj - 1e-12 * std::abs(obj) && t > 1e-8) {
      t *= 0.5;
      next = beta + t * step;
      next_obj = objective(next);
    }
    double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    obj = next_obj;
    if (change < 1e-10) break;
  }
  LinearFit fit;
  fit.coef = beta;
  return fit;
}

std::vector<int> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng::substream(seed, "folds");
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<int> fold(n);
  for (std::size_t k = 0; k < n; ++k) fold[perm[k]] = static_cast<int>(k % folds);
  return fold;
}

double NuisanceModels::mu(int arm, std::size_t row, const ObservationalData& data) const {
  const auto& fits = arm == 1 ? mu1 : mu0;
  return fits[static_cast<std::size_t>(fold_of_row[row])].predict(data.row(row));
}

double NuisanceModels::propensity_at(std::size_t row, const ObservationalData& data) const {
  double p = propensity.p;
  if (propensity.mode == PropensityMode::estimated)
    p = logistic(propensity_fit[static_cast<std::size_t>(fold_of_row[row])].predict(data.row(row)));
  return std::clamp(p, kPropensityClamp, 1.0 - kPropensityClamp);
}

NuisanceModels fit_nuisance(const ObservationalData& data, std::size_t folds, PropensitySpec propensity,
                            std::uint64_t seed) {
  data.validate();
  const std::size_t n = data.size();
  if (folds < 2) throw ValidationError("fit_nuisance: need at least 2 folds");
  if (n < 2 * folds) throw ValidationError("fit_nuisance: need at least 2 rows per fold");
  if (propensity.mode == PropensityMode::fixed && !(propensity.p > 0 && propensity.p < 1))
    throw ValidationError("fit_nuisance: fixed propensity must lie in (0, 1)");

  NuisanceModels m;
  m.folds = folds;
  m.fold_of_row = assign_folds(n, folds, seed);
  m.propensity = propensity;
  Eigen::VectorXd wv(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) wv[static_cast<Eigen::Index>(i)] = data.w[i];

  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> train, arm0, arm1;
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<std::size_t>(m.fold_of_row[i]) == k) continue;
      train.push_back(i);
      (data.w[i] == 1 ? arm1 : arm0).push_back(i);
    }
    if (arm0.empty() || arm1.empty())
      throw ValidationError("fit_nuisance: training data for fold " + std::to_string(k) +
                            " contains only one treatment arm");
    m.mu0.push_back(fit_ols(rows_of(data, arm0), values_of(data.y, arm0)));
    m.mu1.push_back(fit_ols(rows_of(data, arm1), values_of(data.y, arm1)));
    if (propensity.mode == PropensityMode::estimated)
      m.propensity_fit.push_back(fit_logit(rows_of(data, train), values_of(wv, train)));
    m.ridge_fallback_used = m.ridge_fallback_used || m.mu0.back().ridge_fallback || m.mu1.back().ridge_fallback;
  }
  return m;
}

double aipw_score(double y, int w, double mu0, double mu1, double p) {
  const double mu_w = w == 1 ? mu1 : mu0;
  const double denom = w * p + (1 - w) * (1.0 - p);
  return mu1 - mu0 + (2.0 * w - 1.0) * (y - mu_w) / denom;
}

RewardTable doubly_robust_rewards(const ObservationalData& data, const NuisanceModels& nuisance) {
  const std::size_t n = data.size();
  if (nuisance.fold_of_row.size() != n) throw ValidationError("doubly_robust_rewards: nuisance fit on other data");
  RewardTable t;
  t.r_hat.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double p = nuisance.propensity_at(i, data);
    if (!(p > 0.0 && p < 1.0)) throw Error("doubly_robust_rewards: propensity outside (0, 1)");
    t.r_hat[static_cast<Eigen::Index>(i)] =
        aipw_score(data.y[static_cast<Eigen::Index>(i)], data.w[i], nuisance.mu(0, i, data), nuisance.mu(1, i, data), p);
  }
  t.validate();
  return t;
}

RewardTable estimate_compliance(const ObservationalData& data, RewardTable base, std::size_t folds,
                                std::uint64_t seed) {
  if (!data.instrument) throw ValidationError("estimate_compliance: dataset has no instrument column");
  const std::size_t n = data.size();
  const auto& z = *data.instrument;
  if (std::count(z.begin(), z.end(), 0) == 0 || std::count(z.begin(), z.end(), 1) == 0)
    throw ValidationError("estimate_compliance: both instrument arms must be populated");
  if (folds < 2 || n < 2 * folds) throw ValidationError("estimate_compliance: too few rows for the folds");

  const auto fold = assign_folds(n, folds, seed);
  Eigen::VectorXd wv(static_cast<Eigen::Index>(n)), zv(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    wv[static_cast<Eigen::Index>(i)] = data.w[i];
    zv[static_cast<Eigen::Index>(i)] = z[i];
  }
  const Eigen::VectorXd not_w = (1.0 - wv.array()).matrix();

  Eigen::VectorXd qa(static_cast<Eigen::Index>(n)), qn(qa.size()), qc(qa.size()), late(qa.size());
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> all, z0, z1;
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<std::size_t>(fold[i]) == k) continue;
      all.push_back(i);
      (z[i] == 1 ? z1 : z0).push_back(i);
    }
    if (z0.empty() || z1.empty())
      throw ValidationError("estimate_compliance: fold " + std::to_string(k) + " lacks an instrument arm");
    const LinearFit fa = fit_logit(rows_of(data, z0), values_of(wv, z0));
    const LinearFit fn = fit_logit(rows_of(data, z1), values_of(not_w, z1));
    const LinearFit fz = fit_logit(rows_of(data, all), values_of(zv, all));
    const LinearFit my0 = fit_ols(rows_of(data, z0), values_of(data.y, z0));
    const LinearFit my1 = fit_ols(rows_of(data, z1), values_of(data.y, z1));
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<std::size_t>(fold[i]) != k) continue;
      const auto e = static_cast<Eigen::Index>(i);
      const auto x = data.row(i);
      double a = logistic(fa.predict(x));
      double nv = logistic(fn.predict(x));
      double c = std::clamp(1.0 - a - nv, 0.0, 1.0);
      const double s = a + nv + c;
      qa[e] = a / s;
      qn[e] = nv / s;
      qc[e] = c / s;
      // Intention-to-treat AIPW score, scaled by the complier share
      const double pz = std::clamp(logistic(fz.predict(x)), kPropensityClamp, 1.0 - kPropensityClamp);
      const double psi = aipw_score(data.y[e], z[i], my0.predict(x), my1.predict(x), pz);
      late[e] = qc[e] > 1e-3 ? psi / qc[e] : 0.0;
    }
  }
  // the renormalized triple sums to one up to rounding; fold the residue into q_c
  for (Eigen::Index i = 0; i < qc.size(); ++i) qc[i] = std::max(0.0, 1.0 - qa[i] - qn[i]);

  base.q_a = qa;
  base.q_n = qn;
  base.q_c = qc;
  base.late = late;
  if (qc.maxCoeff() <= 1e-3) {
    std::cerr << "warning: no compliers detected; all rewards set to zero\n";
    base.degenerate_compliance = true;
    base.r_hat.setZero();
    base.late->setZero();
  }
  base.validate();
  return base;
}

void RewardTable::validate() const {
  const auto n = r_hat.size();
  if (!r_hat.allFinite()) throw ValidationError("reward table: non-finite r_hat");
  const bool any = q_c || q_a || q_n || late;
  if (!any) return;
  if (!(q_c && q_a && q_n && late)) throw ValidationError("reward table: incomplete compliance columns");
  if (q_c->size() != n || q_a->size() != n || q_n->size() != n || late->size() != n)
    throw ValidationError("reward table: compliance column length mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = (*q_c)[i], a = (*q_a)[i], nv = (*q_n)[i];
    if (c < 0 || c > 1 || a < 0 || a > 1 || nv < 0 || nv > 1 || std::abs(c + a + nv - 1.0) > 1e-9)
      throw ValidationError("reward table: compliance shares of row " + std::to_string(i + 1) + " are not a distribution");
    if (!std::isfinite((*late)[i])) throw ValidationError("reward table: non-finite late");
  }
}

void save_reward_table(const std::filesystem::path& path, const RewardTable& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "row_id,r_hat,q_c,q_a,q_n,late\n";
  for (Eigen::Index i = 0; i < t.r_hat.size(); ++i) {
    out << i << ',' << csv::format(t.r_hat[i]);
    if (t.has_compliance())
      out << ',' << csv::format((*t.q_c)[i]) << ',' << csv::format((*t.q_a)[i]) << ',' << csv::format((*t.q_n)[i])
          << ',' << csv::format((*t.late)[i]);
    else
      out << ",,,,";
    out << '\n';
  }
}

RewardTable load_reward_table(const std::filesystem::path& path) {
  csv::Table tab = csv::read_file(path);
  const int cr = tab.column("r_hat");
  if (cr < 0) throw ValidationError(path.string() + ": missing r_hat column");
  const int cc = tab.column("q_c"), ca = tab.column("q_a"), cn = tab.column("q_n"), cl = tab.column("late");
  const auto n = static_cast<Eigen::Index>(tab.rows.size());
  RewardTable t;
  t.r_hat.resize(n);
  const bool comp = cc >= 0 && n > 0 && !tab.rows[0][cc].empty();
  if (comp) {
    t.q_c.emplace(n);
    t.q_a.emplace(n);
    t.q_n.emplace(n);
    t.late.emplace(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = tab.rows[static_cast<std::size_t>(i)];
    const auto row = static_cast<std::size_t>(i + 1);
    t.r_hat[i] = csv::parse_double(r[cr], row, "r_hat");
    if (comp) {
      (*t.q_c)[i] = csv::parse_double(r[cc], row, "q_c");
      (*t.q_a)[i] = csv::parse_double(r[ca], row, "q_a");
      (*t.q_n)[i] = csv::parse_double(r[cn], row, "q_n");
      (*t.late)[i] = csv::parse_double(r[cl], row, "late");
    }
  }
  t.validate();
  return t;
}

}  // namespace dyntreat
