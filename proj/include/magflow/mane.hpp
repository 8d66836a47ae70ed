#ifndef MAGFLOW_MANE_HPP
#define MAGFLOW_MANE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "magflow/free_time.hpp"

namespace magflow {

/**
 * Critical level estimation. The upper bound minimizes, over primitives
 * theta' = theta_ex + grad f + h of the same exact form, the gauged energy
 *   sup_q [ |theta'(q)|_{g*}^2 / 2 + U(q) ],
 * and the lower bound is certified by loops: a contractible loop whose
 * minimal free-period action at level k is negative proves c > k, while
 * c >= e0 = max U always holds (constants at the maximum with long periods).
 * On the torus the abelian and universal covers coincide, so the same
 * bracket serves both critical values; reports carry the pair anyway.
 */

struct ManeOptions {
  int gauge_budget = 400;   // objective evaluations of the coordinate search
  int grid = 96;            // sup grid per side; refined locally afterwards
  int loop_samples = 64;    // witness loop resolution (verified at twice that)
  int descent_steps = 120;  // Armijo polish budget per witness candidate
  int max_bisect = 40;
  double bisect_tol = 1e-4;
  std::uint64_t seed = 1;
};

namespace detail {

/** Gauge modes live in the half lattice 0 < max(|kx|, |ky|) <= 2. */
inline std::vector<std::pair<int, int>> gauge_lattice() {
  std::vector<std::pair<int, int>> ks;
  for (int kx = -2; kx <= 2; ++kx)
    for (int ky = -2; ky <= 2; ++ky)
      if (kx > 0 || (kx == 0 && ky > 0)) ks.emplace_back(kx, ky);
  return ks;
}

inline Vector2d theta_mean(const ManifoldModel& m) {
  Vector2d h = Vector2d::Zero();
  for (const auto& mode : m.theta_x.modes())
    if (mode.kx == 0 && mode.ky == 0) h.x() += mode.re;
  for (const auto& mode : m.theta_y.modes())
    if (mode.kx == 0 && mode.ky == 0) h.y() += mode.re;
  return h;
}

/** Gauged-energy objective with cached mode bases on the sup grid. */
struct GaugeObjective {
  const ManifoldModel* m = nullptr;
  int grid = 96;
  bool stabilized = false;
  std::vector<std::pair<int, int>> ks = gauge_lattice();

  // per grid point: theta_ex, e^{-2 phi}, U; per mode the two basis fields
  MatrixX2d theta0;
  VectorXd weight, potential;
  std::vector<MatrixX2d> basis;  // 2 per mode: d theta' / d re, / d im

  GaugeObjective(const ManifoldModel& mm, int g, bool stab)
      : m(&mm), grid(g), stabilized(stab) {
    const int np = grid * grid;
    theta0.resize(np, 2);
    weight.resize(np);
    potential.resize(np);
    basis.assign(2 * ks.size(), MatrixX2d(np, 2));
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        const int r = i * grid + j;
        const Vector2d q(double(i) / grid, double(j) / grid);
        theta0.row(r) << mm.theta_x(q), mm.theta_y(q);
        weight(r) = 1.0 / mm.conformal(q);
        potential(r) = mm.U(q);
        for (std::size_t a = 0; a < ks.size(); ++a) {
          const Vector2d k(ks[a].first, ks[a].second);
          const double phase = two_pi * k.dot(q);
          basis[2 * a].row(r) = (-two_pi * std::sin(phase)) * k.transpose();
          basis[2 * a + 1].row(r) = (-two_pi * std::cos(phase)) * k.transpose();
        }
      }
  }

  int dim() const { return 2 * static_cast<int>(ks.size()) + 2 + (stabilized ? 1 : 0); }

  Vector2d theta_at(const VectorXd& x, const Vector2d& q) const {
    Vector2d th(m->theta_x(q), m->theta_y(q));
    for (std::size_t a = 0; a < ks.size(); ++a) {
      const Vector2d k(ks[a].first, ks[a].second);
      const double phase = two_pi * k.dot(q);
      th += x(2 * a) * (-two_pi * std::sin(phase)) * k;
      th += x(2 * a + 1) * (-two_pi * std::cos(phase)) * k;
    }
    th += x.segment<2>(2 * ks.size());
    return th;
  }

  double density(const VectorXd& x, const Vector2d& q) const {
    const Vector2d th = theta_at(x, q);
    return 0.5 * th.squaredNorm() / m->conformal(q) + m->U(q);
  }

  /** sup over the grid, then three levels of local 3x3 refinement. */
  double operator()(const VectorXd& x) const {
    const int nm = static_cast<int>(ks.size());
    double best = -1e300;
    int argr = 0;
    const int np = grid * grid;
    for (int r = 0; r < np; ++r) {
      Vector2d th = theta0.row(r).transpose();
      for (int a = 0; a < 2 * nm; ++a) th += x(a) * basis[a].row(r).transpose();
      th += x.segment<2>(2 * nm);
      const double v = 0.5 * weight(r) * th.squaredNorm() + potential(r);
      if (v > best) {
        best = v;
        argr = r;
      }
    }
    Vector2d q(double(argr / grid) / grid, double(argr % grid) / grid);
    double step = 1.0 / grid;
    for (int level = 0; level < 3; ++level) {
      step /= 4.0;
      Vector2d bq = q;
      for (int di = -2; di <= 2; ++di)
        for (int dj = -2; dj <= 2; ++dj) {
          const Vector2d cand = q + step * Vector2d(di, dj);
          const double v = density(x, cand);
          if (v > best) {
            best = v;
            bq = cand;
          }
        }
      q = bq;
    }
    if (stabilized) best += 0.5 * x(dim() - 1) * x(dim() - 1);
    return best;
  }
};

}  // namespace detail

struct GaugeSearchResult {
  double value = 0.0;       // the gauged-energy upper bound for c
  VectorXd params;          // accepted gauge coordinates
  double stabilizer = 0.0;  // extra constant dt component when enabled
  int evaluations = 0;
};

/**
 * Seeded adaptive coordinate search over gauges. Proposals are per-coordinate
 * zero snaps and gaussian moves with multiplicative step adaptation; every
 * scale in the search is proportional to sup |theta_ex|, so for U = 0 the
 * result obeys the exact quadratic scaling law in the primitive.
 */
inline GaugeSearchResult gauge_upper_bound(const ManifoldModel& m,
                                           const ManeOptions& opt = {},
                                           bool stabilized = false) {
  if (!m.bounded_primitive_exists())
    throw ConfigError("no bounded primitive on the cover: the upper bound is infinite");
  const detail::GaugeObjective obj(m, opt.grid, stabilized);
  const int dim = obj.dim();

  double scale = 0.0;
  for (int r = 0; r < obj.theta0.rows(); ++r)
    scale = std::max(scale, obj.theta0.row(r).norm());
  if (scale == 0.0) scale = 1.0;

  VectorXd x = VectorXd::Zero(dim);
  x.segment<2>(dim - (stabilized ? 3 : 2)) = -detail::theta_mean(m);
  if (stabilized) x(dim - 1) = 0.3 * scale;

  VectorXd sigma = VectorXd::Constant(dim, 0.5 * scale);
  Rng rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  double value = obj(x);
  int evals = 1;
  for (int c = 0; evals < opt.gauge_budget; c = (c + 1) % dim) {
    if (x(c) != 0.0) {  // zero snap keeps the gauge sparse
      VectorXd xz = x;
      xz(c) = 0.0;
      const double vz = obj(xz);
      ++evals;
      if (vz <= value) {
        value = vz;
        x = xz;
      }
    }
    if (evals >= opt.gauge_budget) break;
    VectorXd xg = x;
    xg(c) += sigma(c) * gauss(rng);
    const double vg = obj(xg);
    ++evals;
    if (vg < value) {
      value = vg;
      x = xg;
      sigma(c) = std::min(sigma(c) * 1.6, 10.0 * scale);
    } else {
      sigma(c) = std::max(sigma(c) * 0.7, 1e-9 * scale);
    }
  }

  GaugeSearchResult res;
  res.value = value;
  res.params = x;
  res.stabilizer = stabilized ? x(dim - 1) : 0.0;
  res.evaluations = evals;
  return res;
}

/** Gauged-energy value of the zero gauge, for search sanity checks. */
inline double gauge_initial_value(const ManifoldModel& m, const ManeOptions& opt = {}) {
  const detail::GaugeObjective obj(m, opt.grid, false);
  VectorXd x = VectorXd::Zero(obj.dim());
  x.segment<2>(obj.dim() - 2) = -detail::theta_mean(m);
  return obj(x);
}

struct WitnessReport {
  bool found = false;
  double value = 0.0;       // certified (exact-quadrature) negative action
  double value_fine = 0.0;  // re-evaluated on twice the samples
  double t_star = 0.0;
  DiscreteLoop loop;
};

/**
 * Minimal free-period action of a contractible loop at level k:
 *   min_T  E/(2T) + T (k - Ubar) + Theta,
 * attained at T* = sqrt(E / (2 (k - Ubar))) when k > Ubar; below the mean
 * potential the action is unbounded in T and any long period certifies.
 */
inline double witness_value(const ManifoldModel& m, double k, const DiscreteLoop& w,
                            double* t_star = nullptr) {
  if (!w.cls.trivial()) throw ConfigError("witness loops must be contractible");
  const double energy = loop_energy(m, w);
  double ubar = 0.0;
  for (int i = 0; i < w.N(); ++i) ubar += m.U(w.q.row(i).transpose());
  ubar /= w.N();

  double t = 0.0;
  if (k > ubar + 1e-12) {
    t = std::sqrt(std::max(energy, 1e-300) / (2.0 * (k - ubar)));
  } else {
    // long-period certificate: with T >= E/2 and T (Ubar - k) >= |Theta| + 3
    // the action is at most 1 - 3 + Theta - |Theta| <= -2
    const double theta = std::abs(cap_flux(m, w));
    t = std::max({0.5 * energy, (theta + 3.0) / std::max(ubar - k, 1e-12), 1e-6});
  }
  if (t_star) *t_star = t;
  return free_time_action(m, k, w, t);
}

namespace detail {

inline DiscreteLoop witness_circle(const Vector2d& center, double radius,
                                   int orientation, int n) {
  return make_loop({0, 0}, n, [&](double t) -> Vector2d {
    const double a = two_pi * t * orientation;
    return center + radius * Vector2d(std::cos(a), std::sin(a));
  });
}

/** Armijo descent on the minimal action, with the period enveloped out. */
inline void polish_witness(const ManifoldModel& m, double k, DiscreteLoop& w,
                           double& value, int max_steps) {
  double t_star = 0.0;
  value = witness_value(m, k, w, &t_star);
  double step = 1.0;
  for (int it = 0; it < max_steps && value > -1.0; ++it) {
    if (!(t_star > 0.0)) break;
    const MatrixX2d dq = free_time_differential(m, k, w, t_star).dq;
    const double slope = double(w.N()) * dq.squaredNorm();
    if (slope < 1e-18) break;
    bool accepted = false;
    for (int half = 0; half < 20; ++half) {
      DiscreteLoop trial = w;
      trial.q -= (step * w.N()) * dq;
      const double v = witness_value(m, k, trial, &t_star);
      if (v <= value - 1e-4 * step * slope) {
        w = trial;
        value = v;
        step = std::min(step * 2.0, 1e3);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
}

}  // namespace detail

/** Searches constants and circles, then polishes, for a negative action. */
inline WitnessReport find_witness(const ManifoldModel& m, double k,
                                  const ManeOptions& opt = {}) {
  Vector2d q_max = Vector2d::Zero();
  u_max(m, &q_max);

  std::vector<DiscreteLoop> seeds;
  seeds.push_back(straight_loop({0, 0}, opt.loop_samples, q_max));
  for (const double r : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0})
    for (const int orientation : {+1, -1})
      seeds.push_back(detail::witness_circle(q_max, r, orientation, opt.loop_samples));

  WitnessReport rep;
  const auto certify = [&](const DiscreteLoop& w, double value) {
    double t_fine = 0.0;
    const double fine = witness_value(m, k, resample(w, 2 * w.N()), &t_fine);
    if (value < -1e-6 && fine < -5e-7) {
      rep.found = true;
      rep.value = value;
      rep.value_fine = fine;
      witness_value(m, k, w, &rep.t_star);
      rep.loop = w;
      return true;
    }
    return false;
  };

  double best = 1e300;
  std::size_t best_seed = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const double v = witness_value(m, k, seeds[i]);
    if (v < best) {
      best = v;
      best_seed = i;
    }
    if (v < -1e-6 && certify(seeds[i], v)) return rep;
  }

  DiscreteLoop w = seeds[best_seed];
  detail::polish_witness(m, k, w, best, opt.descent_steps);
  certify(w, best);
  return rep;
}

struct ManeBracket {
  double e0 = 0.0;      // max U, an unconditional lower bound
  double lower = 0.0;   // certified by witnesses (or e0)
  double upper = 0.0;   // rigorous gauge upper bound; inf when B != 0
  bool upper_is_infinite = false;
  double bracket_hi = 0.0;  // bisection working bound (heuristic side)
  std::vector<double> probed;
  std::vector<bool> witnessed;
  // the torus covers coincide, so the abelian value shares the bracket
  double c0_lower = 0.0, c0_upper = 0.0;
};

inline ManeBracket mane_bracket(const ManifoldModel& m, const ManeOptions& opt = {}) {
  ManeBracket rep;
  rep.e0 = u_max(m);
  rep.lower = rep.e0;

  if (!m.bounded_primitive_exists()) {
    rep.upper_is_infinite = true;
    rep.upper = std::numeric_limits<double>::infinity();
    rep.bracket_hi = rep.upper;
    for (int j = 1; j <= 10; ++j) {
      const double k = std::max(rep.e0, 0.0) + j;
      const WitnessReport wit = find_witness(m, k, opt);
      rep.probed.push_back(k);
      rep.witnessed.push_back(wit.found);
      if (wit.found) rep.lower = std::max(rep.lower, k);
    }
    rep.c0_lower = rep.lower;
    rep.c0_upper = rep.upper;
    return rep;
  }

  rep.upper = std::max(gauge_upper_bound(m, opt).value, rep.e0);
  double lo = rep.lower, hi = rep.upper;
  for (int it = 0; it < opt.max_bisect && hi - lo > opt.bisect_tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const WitnessReport wit = find_witness(m, mid, opt);
    rep.probed.push_back(mid);
    rep.witnessed.push_back(wit.found);
    if (wit.found)
      lo = mid;  // certified: the action dips negative above this level
    else
      hi = mid;  // heuristic: no witness in the searched family
  }
  rep.lower = lo;
  rep.bracket_hi = hi;
  rep.c0_lower = rep.lower;
  rep.c0_upper = rep.upper;
  return rep;
}

/** |value(s theta) - s^2 value(theta)| for the potential-free scaling law. */
inline double scaling_defect(const ManifoldModel& m, double s,
                             const ManeOptions& opt = {}) {
  ManifoldModel scaled = m;
  scaled.U = {};
  scaled.theta_x = {};
  scaled.theta_y = {};
  for (const auto& mode : m.theta_x.modes())
    scaled.theta_x.add(mode.kx, mode.ky, s * mode.re, s * mode.im);
  for (const auto& mode : m.theta_y.modes())
    scaled.theta_y.add(mode.kx, mode.ky, s * mode.re, s * mode.im);
  ManifoldModel base = scaled;
  base.theta_x = {};
  base.theta_y = {};
  for (const auto& mode : m.theta_x.modes())
    base.theta_x.add(mode.kx, mode.ky, mode.re, mode.im);
  for (const auto& mode : m.theta_y.modes())
    base.theta_y.add(mode.kx, mode.ky, mode.re, mode.im);
  const double v1 = gauge_upper_bound(base, opt).value;
  const double vs = gauge_upper_bound(scaled, opt).value;
  return std::abs(vs - s * s * v1);
}

}  // namespace magflow

#endif
