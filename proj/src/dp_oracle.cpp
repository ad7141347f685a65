#include "dyntreat/dp_oracle.hpp"

#include "dyntreat/csv.hpp"
#include "dyntreat/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dyntreat {

namespace {

// Value at a continuous z on a fixed time slice, as a combination of two nodes.
struct Target {
  int lo = -1;  // -1: outside the domain, value 0
  double w = 0;  // weight on node lo + 1
};

struct Grid {
  std::vector<double> z;
  std::vector<double> t;
  double dz = 0;
  int shift = 0;  // nodes moved down by one treatment
  bool periodic = false;
  bool deterministic = false;
  bool income = false;
  std::size_t slices = 0;  // time columns that carry unknowns
};

// Weights of the node values h(., t_{j+d}), d = 0, 1, ..., in
//   int_0^{T - t_j} mu e^{-(beta + mu) s} h(., t_j + s) ds
// for h piecewise linear in t on a uniform grid with step dt. The censoring
// atom at T multiplies h(., T), which is zero under Dirichlet, so it is left out.
std::vector<double> time_weights(double mu, double beta, double dt, std::size_t cells) {
  const double a = beta + mu;
  const double x = a * dt;
  const double q = std::exp(-x);
  const double e0 = -std::expm1(-x) / a;
  // (1 - e^{-x}(1 + x)) / (a x), with a series for small x
  double e1;
  if (x < 1e-4)
    e1 = dt * (0.5 - x / 3.0 + x * x / 8.0);
  else
    e1 = (-std::expm1(-x) - x * std::exp(-x)) / (a * x);
  const double c0 = mu * (e0 - e1);
  const double c1 = mu * e1;
  std::vector<double> w;
  w.push_back(c0);
  double qd = 1.0;
  for (std::size_t d = 1; d <= cells; ++d) {
    const double prev = qd;
    qd *= q;
    const double v = prev * c1 + (d < cells ? qd * c0 : 0.0);
    w.push_back(v);
    if (qd < 1e-22) break;
  }
  return w;
}

Target locate(const Grid& g, double z, double z_lower, bool dirichlet) {
  if (dirichlet && z <= z_lower + 1e-9 * g.dz) return {};
  const double pos = (z - g.z.front()) / g.dz;
  if (pos <= 0) return {0, 0.0};
  const auto top = static_cast<double>(g.z.size() - 1);
  if (pos >= top) return {static_cast<int>(g.z.size()) - 2 < 0 ? 0 : static_cast<int>(g.z.size()) - 2, g.z.size() > 1 ? 1.0 : 0.0};
  const double fl = std::floor(pos);
  double w = pos - fl;
  int lo = static_cast<int>(fl);
  if (w < 1e-9) w = 0.0;
  if (w > 1.0 - 1e-9) {
    ++lo;
    w = 0.0;
  }
  return {lo, w};
}

struct Coefficients {
  // per (k, j): expected reward / b_n, probability that a treatment is delivered
  RowMatrix rbar;
  RowMatrix p1;
  std::vector<std::vector<Target>> target0;  // [j][k]
  std::vector<std::vector<Target>> target1;
};

double value_at(const RowMatrix& h, const Target& tg, std::size_t col) {
  if (tg.lo < 0) return 0.0;
  const auto lo = static_cast<Eigen::Index>(tg.lo);
  const auto c = static_cast<Eigen::Index>(col);
  double v = h(lo, c);
  if (tg.w != 0.0) v = (1.0 - tg.w) * v + tg.w * h(lo + 1, c);
  return v;
}

}  // namespace

double GridValue::at(double zq, double tq) const {
  if (z.empty() || t.empty()) return 0.0;
  const double dz = z.size() > 1 ? z[1] - z[0] : 1.0;
  double pz = std::clamp((zq - z.front()) / dz, 0.0, static_cast<double>(z.size() - 1));
  const bool periodic = boundary == Boundary::periodic || boundary == Boundary::periodic_neumann;
  const double dt = t.size() > 1 ? t[1] - t[0] : 1.0;
  double pt;
  std::size_t nt = t.size();
  if (periodic) {
    const double period = dt * static_cast<double>(nt);
    double rel = std::fmod(tq - t.front(), period);
    if (rel < 0) rel += period;
    pt = rel / dt;
  } else {
    pt = std::clamp((tq - t.front()) / dt, 0.0, static_cast<double>(nt - 1));
  }
  auto iz = static_cast<std::size_t>(std::floor(pz));
  auto it = static_cast<std::size_t>(std::floor(pt));
  if (iz >= z.size() - 1) iz = z.size() >= 2 ? z.size() - 2 : 0;
  const double wz = z.size() > 1 ? pz - static_cast<double>(iz) : 0.0;
  std::size_t it1;
  double wt;
  if (periodic) {
    it %= nt;
    it1 = (it + 1) % nt;
    wt = pt - std::floor(pt);
  } else {
    if (it >= nt - 1) it = nt >= 2 ? nt - 2 : 0;
    it1 = std::min(it + 1, nt - 1);
    wt = nt > 1 ? pt - static_cast<double>(it) : 0.0;
  }
  const std::size_t iz1 = std::min(iz + 1, z.size() - 1);
  auto H = [&](std::size_t a, std::size_t b) { return h(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)); };
  return (1 - wz) * ((1 - wt) * H(iz, it) + wt * H(iz, it1)) + wz * ((1 - wt) * H(iz1, it) + wt * H(iz1, it1));
}

GridValue solve_dp_value(const PolicyParams& params, const EnvInputs& inputs, const DpOptions& options) {
  params.validate();
  const EnvConfig& c = inputs.config;
  const bool periodic = c.boundary == Boundary::periodic;
  if (c.boundary != Boundary::dirichlet && !periodic)
    throw ValidationError("dp: only the dirichlet and periodic regimes have a grid solver");
  if (periodic && !(c.beta > 0)) throw ValidationError("dp: periodic value iteration needs beta > 0 (no contraction)");
  if (!std::isfinite(c.z_lower)) throw ValidationError("dp: z_lower must be finite");
  if (!inputs.constant_cost()) throw ValidationError("dp: the grid solver needs a constant treatment cost");
  if (!(c.cost > 0)) throw ValidationError("dp: the treatment cost must be positive");
  if (!periodic && !std::isfinite(c.horizon)) throw ValidationError("dp: dirichlet grid solver needs a finite horizon");
  if (options.deterministic && !(c.lattice_dt > 0)) throw ValidationError("dp: deterministic mode needs lattice_dt > 0");
  if (options.forecast >= inputs.forecasts.members.size()) throw ValidationError("dp: no such forecast member");
  if (options.time_steps < 1 || options.z_refine < 1) throw ValidationError("dp: grid sizes must be positive");
  if (params.spec.required_covariates() > inputs.data.dim()) throw ValidationError("dp: policy needs more covariates than the data has");

  const auto& model = inputs.forecasts.members[options.forecast];
  const bool dirichlet = !periodic;
  Grid g;
  g.periodic = periodic;
  g.deterministic = options.deterministic;
  g.income = c.income_rate != 0.0 || c.income_cos != 0.0 || c.interest != 0.0;
  g.dz = c.cost / static_cast<double>(options.z_refine);
  g.shift = static_cast<int>(options.z_refine);

  // z nodes anchored at z0, from the floor up to z_max
  const auto below = static_cast<std::size_t>(std::floor((c.z0 - c.z_lower) / g.dz + 1e-9));
  double z_max = options.z_max;
  if (std::isnan(z_max)) {
    if (!g.income) {
      z_max = c.z0;
    } else {
      if (periodic) throw ValidationError("dp: periodic regime with income needs an explicit z_max");
      // worst case growth of dz/dt = rho_max + b z over the horizon
      const double rho = std::max(0.0, c.income_rate + std::abs(c.income_cos));
      const double span = c.horizon - c.t0;
      z_max = c.interest > 0 ? (c.z0 + rho / c.interest) * std::exp(c.interest * span) - rho / c.interest
                             : c.z0 + rho * span;
    }
  }
  const auto above = static_cast<std::size_t>(std::ceil(std::max(0.0, z_max - c.z0) / g.dz - 1e-9));
  const std::size_t nz = below + above + 1;
  for (std::size_t k = 0; k < nz; ++k) g.z.push_back(c.z0 - (static_cast<double>(below) - static_cast<double>(k)) * g.dz);

  // time nodes
  double dt;
  std::size_t nt;
  if (periodic) {
    if (options.deterministic) {
      dt = c.lattice_dt;
      const double m = std::round(c.period / dt);
      if (m < 1 || std::abs(m * dt - c.period) > 1e-9 * c.period)
        throw ValidationError("dp: lattice_dt must divide the period");
      nt = static_cast<std::size_t>(m);
    } else {
      nt = options.time_steps;
      dt = c.period / static_cast<double>(nt);
    }
    for (std::size_t j = 0; j < nt; ++j) g.t.push_back(c.t0 + static_cast<double>(j) * dt);
    g.slices = nt;
  } else {
    const double span = c.horizon - c.t0;
    if (!(span > 0)) throw ValidationError("dp: horizon must exceed t0");
    std::size_t m;
    if (options.deterministic) {
      dt = c.lattice_dt;
      m = static_cast<std::size_t>(std::ceil(span / dt - 1e-9));
      for (std::size_t j = 0; j < m; ++j) g.t.push_back(c.t0 + static_cast<double>(j) * dt);
    } else {
      m = options.time_steps;
      dt = span / static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) g.t.push_back(c.t0 + static_cast<double>(j) * dt);
    }
    g.t.push_back(c.horizon);
    nt = m + 1;
    g.slices = m;
  }

  // rewards, treatment probabilities and successor positions per node
  const std::size_t n = inputs.data.size();
  const bool comp = inputs.rewards.has_compliance();
  Coefficients co;
  co.rbar = RowMatrix::Zero(static_cast<Eigen::Index>(nz), static_cast<Eigen::Index>(nt));
  co.p1 = RowMatrix::Zero(static_cast<Eigen::Index>(nz), static_cast<Eigen::Index>(nt));
  co.target0.assign(g.slices, std::vector<Target>(nz));
  co.target1.assign(g.slices, std::vector<Target>(nz));
  std::vector<double> mu(g.slices);
  for (std::size_t j = 0; j < g.slices; ++j) {
    const double tj = g.t[j];
    const double lambda = aggregate_rate(model, tj);
    mu[j] = lambda * c.b_n;
    std::vector<double> prob(n);
    for (std::size_t i = 0; i < n; ++i) prob[i] = inputs.row_probability(i, tj, options.forecast);
#pragma omp parallel for schedule(static) if (options.parallel)
    for (std::size_t k = 0; k < nz; ++k) {
      const double zk = g.z[k];
      const auto ke = static_cast<Eigen::Index>(k);
      const auto je = static_cast<Eigen::Index>(j);
      const bool terminal = dirichlet && zk <= c.z_lower + 1e-9 * g.dz;
      // a treatment is possible iff the node one cost lower is still at or above the floor
      const bool feasible = !terminal && static_cast<int>(k) >= g.shift &&
                            g.z[k - static_cast<std::size_t>(g.shift)] >= c.z_lower - 1e-9 * g.dz;
      double r = 0, p = 0;
      if (feasible) {
        for (std::size_t i = 0; i < n; ++i) {
          const auto ie = static_cast<Eigen::Index>(i);
          const double pi = action_prob(params, {inputs.data.row(i), zk, tj});
          const double qc = comp ? (*inputs.rewards.q_c)[ie] : 1.0;
          const double qa = comp ? (*inputs.rewards.q_a)[ie] : 0.0;
          const double ri = comp ? (*inputs.rewards.late)[ie] : inputs.rewards.r_hat[ie];
          r += prob[i] * qc * pi * ri;
          p += prob[i] * (qc * pi + qa);
        }
      }
      co.rbar(ke, je) = r / c.b_n;
      co.p1(ke, je) = p;
      if (!g.income) {
        co.target0[j][k] = terminal ? Target{} : Target{static_cast<int>(k), 0.0};
        if (feasible) {
          const std::size_t down = k - static_cast<std::size_t>(g.shift);
          const bool dead = dirichlet && g.z[down] <= c.z_lower + 1e-9 * g.dz;
          co.target1[j][k] = dead ? Target{} : Target{static_cast<int>(down), 0.0};
        }
      } else {
        const double zi = zk + c.income(zk, tj) / (lambda * c.b_n);
        co.target0[j][k] = terminal ? Target{} : locate(g, std::max(zi, c.z_lower), c.z_lower, dirichlet);
        if (feasible) co.target1[j][k] = locate(g, std::max(zi - c.cost, c.z_lower), c.z_lower, dirichlet);
      }
    }
  }

  GridValue out;
  out.boundary = c.boundary;
  out.z = g.z;
  out.t = g.t;
  out.theta = params.theta;
  out.b_n = c.b_n;
  out.h = RowMatrix::Zero(static_cast<Eigen::Index>(nz), static_cast<Eigen::Index>(nt));
  out.discounted_arrivals = out.h;
  RowMatrix& h = out.h;
  RowMatrix& ca = out.discounted_arrivals;
  const double unit = 1.0 / c.b_n;

  auto is_terminal_node = [&](std::size_t k) { return dirichlet && g.z[k] <= c.z_lower + 1e-9 * g.dz; };
  auto col_of = [&](std::size_t j, std::size_t d) { return periodic ? (j + d) % nt : j + d; };

  // Deterministic lattice: one step ahead, no self-reference.
  if (options.deterministic) {
    auto backup = [&](std::size_t j) {
      const std::size_t jn = col_of(j, 1);
      const double step = periodic ? dt : g.t[j + 1] - g.t[j];
      const double disc = std::exp(-c.beta * step);
      const bool next_terminal = dirichlet && jn == nt - 1;
      double change = 0;
      for (std::size_t k = 0; k < nz; ++k) {
        if (is_terminal_node(k)) continue;
        const auto ke = static_cast<Eigen::Index>(k);
        const auto je = static_cast<Eigen::Index>(j);
        const double p1 = co.p1(ke, je);
        double f1 = 0, f0 = 0, a1 = 0, a0 = 0;
        if (!next_terminal) {
          f1 = p1 > 0 ? value_at(h, co.target1[j][k], jn) : 0.0;
          f0 = value_at(h, co.target0[j][k], jn);
          a1 = p1 > 0 ? value_at(ca, co.target1[j][k], jn) : 0.0;
          a0 = value_at(ca, co.target0[j][k], jn);
        }
        const double hv = co.rbar(ke, je) + disc * (p1 * f1 + (1.0 - p1) * f0);
        const double cv = unit + disc * (p1 * a1 + (1.0 - p1) * a0);
        change = std::max(change, std::abs(hv - h(ke, je)));
        h(ke, je) = hv;
        ca(ke, je) = cv;
      }
      return change;
    };
    if (!periodic) {
      for (std::size_t j = g.slices; j-- > 0;) backup(j);
      out.sweeps = 1;
    } else {
      for (out.sweeps = 1; out.sweeps <= options.max_sweeps; ++out.sweeps) {
        double change = 0;
        for (std::size_t j = nt; j-- > 0;) change = std::max(change, backup(j));
        if (change < options.tolerance) break;
      }
    }
  } else {
    // Exponential interarrival times: exact integration of the exponential
    // density against the piecewise-linear-in-t interpolant.
    std::vector<std::vector<double>> weights(g.slices);
    for (std::size_t j = 0; j < g.slices; ++j) {
      const std::size_t cells = periodic ? std::numeric_limits<std::size_t>::max() / 2 : g.slices - j;
      weights[j] = time_weights(mu[j], c.beta, dt, cells);
    }
    std::vector<double> f1(nz), f0(nz), g1(nz), g0(nz);
    auto solve_slice = [&](std::size_t j) {
      const auto& w = weights[j];
      const auto je = static_cast<Eigen::Index>(j);
      // contributions of later time columns
#pragma omp parallel for schedule(static) if (options.parallel)
      for (std::size_t k = 0; k < nz; ++k) {
        double s1 = 0, s0 = 0, u1 = 0, u0 = 0;
        if (!is_terminal_node(k)) {
          const bool treat = co.p1(static_cast<Eigen::Index>(k), je) > 0;
          for (std::size_t d = 1; d < w.size(); ++d) {
            const std::size_t col = col_of(j, d);
            if (treat) {
              s1 += w[d] * value_at(h, co.target1[j][k], col);
              u1 += w[d] * value_at(ca, co.target1[j][k], col);
            }
            s0 += w[d] * value_at(h, co.target0[j][k], col);
            u0 += w[d] * value_at(ca, co.target0[j][k], col);
          }
        }
        f1[k] = s1;
        f0[k] = s0;
        g1[k] = u1;
        g0[k] = u0;
      }
      // same-column terms: Gauss-Seidel upward in z, own node solved exactly
      double total = 0;
      for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
        double change = 0;
        for (std::size_t k = 0; k < nz; ++k) {
          if (is_terminal_node(k)) continue;
          const auto ke = static_cast<Eigen::Index>(k);
          const double p1 = co.p1(ke, je);
          double hv = co.rbar(ke, je) + p1 * f1[k] + (1.0 - p1) * f0[k];
          double cv = unit + p1 * g1[k] + (1.0 - p1) * g0[k];
          double self = 0;
          auto add = [&](const Target& tg, double pa) {
            if (tg.lo < 0 || pa == 0.0) return;
            const std::size_t lo = static_cast<std::size_t>(tg.lo);
            const double wl = pa * w[0] * (1.0 - tg.w);
            const double wh = pa * w[0] * tg.w;
            if (lo == k) self += wl;
            else {
              hv += wl * h(static_cast<Eigen::Index>(lo), je);
              cv += wl * ca(static_cast<Eigen::Index>(lo), je);
            }
            if (wh != 0.0) {
              if (lo + 1 == k) self += wh;
              else {
                hv += wh * h(static_cast<Eigen::Index>(lo + 1), je);
                cv += wh * ca(static_cast<Eigen::Index>(lo + 1), je);
              }
            }
          };
          add(co.target1[j][k], p1);
          add(co.target0[j][k], 1.0 - p1);
          hv /= 1.0 - self;
          cv /= 1.0 - self;
          change = std::max(change, std::abs(hv - h(ke, je)));
          h(ke, je) = hv;
          ca(ke, je) = cv;
        }
        total = std::max(total, change);
        if (change < options.tolerance) break;
        if (!g.income && sweep >= 1) break;  // downward-only coupling: exact after one pass
      }
      return total;
    };
    if (!periodic) {
      for (std::size_t j = g.slices; j-- > 0;) solve_slice(j);
      out.sweeps = 1;
    } else {
      for (out.sweeps = 1; out.sweeps <= options.max_sweeps; ++out.sweeps) {
        const RowMatrix before = h;
        for (std::size_t j = nt; j-- > 0;) solve_slice(j);
        if ((h - before).lpNorm<Eigen::Infinity>() < options.tolerance) break;
      }
    }

    // residual of the fixed-point equation at every node
    double res = 0;
    for (std::size_t j = 0; j < g.slices; ++j) {
      const auto& w = weights[j];
      const auto je = static_cast<Eigen::Index>(j);
      for (std::size_t k = 0; k < nz; ++k) {
        if (is_terminal_node(k)) continue;
        const auto ke = static_cast<Eigen::Index>(k);
        const double p1 = co.p1(ke, je);
        double s = co.rbar(ke, je);
        for (std::size_t d = 0; d < w.size(); ++d) {
          const std::size_t col = col_of(j, d);
          if (p1 > 0) s += p1 * w[d] * value_at(h, co.target1[j][k], col);
          s += (1.0 - p1) * w[d] * value_at(h, co.target0[j][k], col);
        }
        res = std::max(res, std::abs(s - h(ke, je)));
      }
    }
    out.max_residual = res;
  }
  if (!h.allFinite()) throw Error("dp: solution is not finite");
  return out;
}

double dp_value_at_start(const PolicyParams& params, const EnvInputs& inputs, const DpOptions& options) {
  double v = 0;
  for (std::size_t f = 0; f < inputs.forecasts.members.size(); ++f) {
    if (inputs.forecasts.weights[f] == 0.0) continue;
    DpOptions o = options;
    o.forecast = f;
    GridValue g = solve_dp_value(params, inputs, o);
    // z0 is a grid node by construction, t0 is the first column
    const auto k = static_cast<std::size_t>(std::floor((inputs.config.z0 - inputs.config.z_lower) / (inputs.config.cost / static_cast<double>(o.z_refine)) + 1e-9));
    v += inputs.forecasts.weights[f] * g.h(static_cast<Eigen::Index>(k), 0);
  }
  return v;
}

OdeValue solve_ode_value(const PolicyParams& params, const RewardTable& rewards, const ObservationalData& data,
                         double beta, double b_n, double z0) {
  params.validate();
  if (!(b_n >= 1)) throw ValidationError("ode: b_n must be at least 1");
  if (beta >= b_n) throw ValidationError("ode: beta must be below b_n");
  if (!(z0 >= 0)) throw ValidationError("ode: z0 must be non-negative");
  if (rewards.size() != data.size()) throw ValidationError("ode: reward table does not match data");
  const std::size_t n = data.size();
  const auto steps = static_cast<std::size_t>(std::llround(z0 * b_n));
  OdeValue out;
  out.z.resize(steps + 1);
  out.h.assign(steps + 1, 0.0);
  const double keep = 1.0 - beta / b_n;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double z = static_cast<double>(k) / b_n;
    out.z[k] = z;
    if (k == 0) continue;
    double r = 0, p = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pi = action_prob(params, {data.row(i), z, 0.0});
      r += rewards.r_hat[static_cast<Eigen::Index>(i)] * pi;
      p += pi;
    }
    r /= static_cast<double>(n);
    p /= static_cast<double>(n);
    out.h[k] = (r / b_n + keep * p * out.h[k - 1]) / (1.0 - keep * (1.0 - p));
  }
  return out;
}

double TinyInstance::probability(std::size_t type) const {
  double total = 0;
  for (int m : multiplicity) total += m;
  return multiplicity[type] / total;
}

std::shared_ptr<const EnvInputs> TinyInstance::to_env_inputs() const {
  if (x.empty() || x.size() != reward.size() || x.size() != multiplicity.size())
    throw ValidationError("tiny instance: one reward and multiplicity per type");
  std::size_t rows = 0;
  for (int m : multiplicity) {
    if (m < 1) throw ValidationError("tiny instance: multiplicities must be positive");
    rows += static_cast<std::size_t>(m);
  }
  const auto d = x[0].size();
  ObservationalData data;
  data.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
  data.w.assign(rows, 0);
  data.x.resize(static_cast<Eigen::Index>(rows), d);
  RewardTable rt;
  rt.r_hat.resize(static_cast<Eigen::Index>(rows));
  std::size_t r = 0;
  for (std::size_t ty = 0; ty < x.size(); ++ty)
    for (int m = 0; m < multiplicity[ty]; ++m, ++r) {
      data.x.row(static_cast<Eigen::Index>(r)) = x[ty].transpose();
      rt.r_hat[static_cast<Eigen::Index>(r)] = reward[ty];
      data.w[r] = static_cast<int>(r % 2);
    }
  EnvConfig c;
  c.boundary = Boundary::dirichlet;
  c.z0 = z0;
  c.t0 = t0;
  c.horizon = t0 + static_cast<double>(epochs) * dt;
  c.z_lower = z_lower;
  c.beta = beta;
  c.b_n = b_n;
  c.cost = cost;
  c.lattice_dt = dt;
  return EnvInputs::create(c, std::move(data), std::move(rt));
}

namespace {

struct Enumerator {
  const PolicyParams& params;
  const TinyInstance& in;
  std::vector<double> prob;

  // Expected discounted welfare from decision epoch e with budget z, as seen at t0.
  double value(std::size_t e, double z) const {
    if (e >= in.epochs || z <= in.z_lower) return 0.0;
    const double t = in.t0 + static_cast<double>(e) * in.dt;
    const double disc = std::exp(-in.beta * (t - in.t0));
    double total = 0;
    for (std::size_t ty = 0; ty < in.x.size(); ++ty) {
      const Eigen::VectorXd& xv = in.x[ty];
      const StateView s{std::span<const double>(xv.data(), static_cast<std::size_t>(xv.size())), z, t};
      const double p_treat = action_prob(params, s);
      const bool can = z - in.cost >= in.z_lower;
      // action 1
      double v1 = 0;
      if (can) v1 = disc * in.reward[ty] / in.b_n + value(e + 1, z - in.cost);
      else v1 = value(e + 1, z);
      const double v0 = value(e + 1, z);
      total += prob[ty] * (p_treat * v1 + (1.0 - p_treat) * v0);
    }
    return total;
  }
};

}  // namespace

double brute_force_welfare(const PolicyParams& params, const TinyInstance& instance, std::size_t max_treatments) {
  params.validate();
  if (instance.x.empty() || instance.x.size() > 4) throw ValidationError("brute force: 1 to 4 covariate types");
  if (instance.epochs > 12) throw ValidationError("brute force: at most 12 epochs");
  const double branches = std::pow(2.0 * static_cast<double>(instance.x.size()), static_cast<double>(instance.epochs));
  if (branches > 1e8) throw ValidationError("brute force: enumeration exceeds 1e8 branches");
  if (!(instance.cost > 0)) throw ValidationError("brute force: cost must be positive");
  const double affordable = std::floor((instance.z0 - instance.z_lower) / instance.cost + 1e-9);
  if (affordable > static_cast<double>(max_treatments))
    throw ValidationError("brute force: budget allows more than max_treatments treatments");
  Enumerator en{params, instance, {}};
  for (std::size_t ty = 0; ty < instance.x.size(); ++ty) en.prob.push_back(instance.probability(ty));
  return en.value(0, instance.z0);
}

Eigen::VectorXd policy_grad_fd(const PolicyParams& params, const std::function<double(const PolicyParams&)>& value,
                               double eps) {
  if (!(eps > 0)) throw ValidationError("policy_grad_fd: eps must be positive");
  Eigen::VectorXd g(params.theta.size());
  for (Eigen::Index j = 0; j < params.theta.size(); ++j) {
    PolicyParams up = params, down = params;
    up.theta[j] += eps;
    down.theta[j] -= eps;
    const double vu = value(up);
    const double vd = value(down);
    if (!std::isfinite(vu) || !std::isfinite(vd)) throw Error("policy_grad_fd: solver failed at a perturbation");
    g[j] = (vu - vd) / (2.0 * eps);
  }
  return g;
}

void save_grid_value(const std::filesystem::path& path, const GridValue& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "z,t,h\n";
  for (std::size_t k = 0; k < g.z.size(); ++k)
    for (std::size_t j = 0; j < g.t.size(); ++j)
      out << csv::format(g.z[k]) << ',' << csv::format(g.t[j]) << ','
          << csv::format(g.h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) << '\n';
}

}  // namespace dyntreat
