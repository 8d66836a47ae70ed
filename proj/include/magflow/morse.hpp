#ifndef MAGFLOW_MORSE_HPP
#define MAGFLOW_MORSE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "magflow/free_time.hpp"
#include "magflow/indices.hpp"

namespace magflow {

struct MorseOptions {
  int n = 64;                   // loop grid for orbits and shots
  int seed_grid = 6;            // base-point grid per axis in the multistart
  int fan = 16;                 // launch phases per sign branch (divides n)
  double delta = 1e-3;          // shot offset along unstable eigendirections
  double land_dist = 1e-3;      // aligned-distance basin tolerance
  double land_residual = 1e-6;  // polish residual needed to classify a limit
  int flow_steps = 3000;
  double flow_tol = 1e-5;
  int m_fan = 36;               // fan size for the surface-level shots
};

// ---------------------------------------------------------------------------
// Phase alignment on critical circles

/** Loop at shifted parameter t -> t + s for fractional s, same class. */
inline DiscreteLoop shift_fractional(const DiscreteLoop& w, double s) {
  const int n = w.N();
  const double grid = s * n;
  const long nearest = std::lround(grid);
  if (std::abs(grid - nearest) < 1e-12) return shift_loop(w, static_cast<int>(nearest));
  DiscreteLoop r;
  r.cls = w.cls;
  r.q.resize(n, 2);
  for (int i = 0; i < n; ++i)
    r.q.row(i) = loop_at(w, double(i) / n + s).transpose();
  return r;
}

struct CircleAlignment {
  double dist = 0.0;   // rms distance after the best shift and deck move
  double shift = 0.0;  // s in [0,1): ref(. + s) ~ probe
};

namespace detail {

/** rms distance between two sample sets modulo integer deck translations. */
inline double deck_distance(const MatrixX2d& a, const MatrixX2d& b) {
  MatrixX2d diff = a - b;
  const Vector2d mean = diff.colwise().mean().transpose();
  diff.col(0).array() -= std::round(mean(0));
  diff.col(1).array() -= std::round(mean(1));
  return std::sqrt(diff.squaredNorm() / diff.rows());
}

}  // namespace detail

/**
 * Best time-shift alignment of ref onto probe, quotienting by integer torus
 * translations: coarse minimum over grid shifts, then golden-section in the
 * fractional shift through the cardinal interpolant.
 */
inline CircleAlignment circle_alignment(const DiscreteLoop& probe, const DiscreteLoop& ref) {
  if (!(probe.cls == ref.cls))
    throw ConfigError("cannot align loops of different homotopy classes");
  const DiscreteLoop p = probe.N() == ref.N() ? probe : resample(probe, ref.N());
  const int n = ref.N();

  int best = 0;
  double best_d = 1e300;
  for (int j = 0; j < n; ++j) {
    const double d = detail::deck_distance(p.q, shift_loop(ref, j).q);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  auto at = [&](double s) { return detail::deck_distance(p.q, shift_fractional(ref, s).q); };
  double lo = double(best - 1) / n, hi = double(best + 1) / n;
  const double gold = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - gold * (hi - lo), x2 = lo + gold * (hi - lo);
  double f1 = at(x1), f2 = at(x2);
  for (int it = 0; it < 40; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gold * (hi - lo);
      f1 = at(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gold * (hi - lo);
      f2 = at(x2);
    }
  }
  const double s = 0.5 * (lo + hi);
  CircleAlignment a;
  a.dist = at(s);
  a.shift = s - std::floor(s);
  return a;
}

// ---------------------------------------------------------------------------
// Generators

/**
 * One S^1 family of closed orbits. The auxiliary Morse function on the circle
 * is the height f(s) = -cos(2 pi s) of the time-shift parameter against the
 * representative: minimum at the representative itself, maximum at shift 1/2.
 */
struct CriticalCircle {
  CriticalOrbit orbit;
  MorseIndices index;
  int chi = 0;
};

/**
 * Chain generator: a critical point of the auxiliary function. On a circle,
 * i_f in {0,1} picks the f-minimum or f-maximum and degree = i + i_f. A
 * generator with circle = -1 is a critical point at infinity: a critical
 * point of the surface Morse function, i_f its surface index, i(w) = 0.
 */
struct MorseGenerator {
  int circle = -1;
  int i_f = 0;
  int degree = 0;
  double action = 0.0;
  Vector2d at_infinity = Vector2d::Zero();
};

/** Self-indexing surface Morse function 1 - cos(2 pi x)/2 - cos(2 pi y)/2. */
inline FourierTable2 surface_morse_function() {
  FourierTable2 f;
  f.add(0, 0, 1.0, 0.0);
  f.add(1, 0, -0.5, 0.0);
  f.add(0, 1, -0.5, 0.0);
  return f;
}

inline std::vector<MorseGenerator> generators_at_infinity() {
  std::vector<MorseGenerator> g(4);
  g[0] = {-1, 0, 0, 0.0, {0.0, 0.0}};
  g[1] = {-1, 1, 1, 0.0, {0.5, 0.0}};
  g[2] = {-1, 1, 1, 0.0, {0.0, 0.5}};
  g[3] = {-1, 2, 2, 0.0, {0.5, 0.5}};
  return g;
}

// ---------------------------------------------------------------------------
// Critical-circle enumeration

struct Enumeration {
  std::vector<CriticalCircle> circles;
  bool complete = true;  // no new circle in the last half of the seed budget
};

/**
 * Multistart search for critical circles of the free-period action in one
 * homotopy class below an action cap. Straight-loop seeds over a base-point
 * grid and period multiples; contractible classes add small round seeds,
 * which either collapse or converge. A found point with nullity >= 2 means
 * the configuration is outside the nondegenerate regime.
 */
inline Enumeration enumerate_critical(const ManifoldModel& m, double k,
                                      HomotopyClass cls, double action_cap,
                                      const MorseOptions& opt = {}) {
  std::vector<std::pair<DiscreteLoop, double>> seeds;
  if (!cls.trivial()) {
    const double len = cls.vec().norm();
    const double tnat = len / std::sqrt(2.0 * std::max(k - u_min(m), 0.1));
    for (const double f : {1.0, 0.5, 2.0})
      for (int gy = 0; gy < opt.seed_grid; ++gy)
        for (int gx = 0; gx < opt.seed_grid; ++gx)
          seeds.push_back({straight_loop(cls, opt.n,
                                         {double(gx) / opt.seed_grid,
                                          double(gy) / opt.seed_grid}),
                           f * tnat});
  } else {
    for (const double t0 : {1.0, 0.4})
      for (const double rad : {0.05, 0.2})
        for (int gy = 0; gy < 3; ++gy)
          for (int gx = 0; gx < 3; ++gx) {
            const Vector2d c(gx / 3.0, gy / 3.0);
            seeds.push_back({make_loop({0, 0}, opt.n,
                                       [&](double t) -> Vector2d {
                                         const double a = two_pi * t;
                                         return c + rad * Vector2d(std::cos(a),
                                                                   std::sin(a));
                                       }),
                             t0});
          }
  }

  Enumeration out;
  int last_new = -1;
  for (int si = 0; si < static_cast<int>(seeds.size()); ++si) {
    const DescentReport pre = descend_flow(m, k, seeds[si].first, seeds[si].second,
                                           opt.flow_steps, 1e-3);
    if (pre.collapsed) continue;
    const CriticalOrbit c = find_critical(m, k, pre.loop, pre.T);
    if (!c.converged || c.residual > opt.land_residual) continue;
    if (c.T < 1e-4 || c.S > action_cap + 1e-9) continue;

    bool duplicate = false;
    for (const CriticalCircle& known : out.circles) {
      if (std::abs(known.orbit.T - c.T) > 1e-3 * (1.0 + c.T)) continue;
      if (std::abs(known.orbit.S - c.S) > 1e-3 * (1.0 + std::abs(c.S))) continue;
      if (circle_alignment(c.loop, known.orbit.loop).dist < 10 * opt.land_dist) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) continue;

    const MorseIndices idx = morse_indices(m, k, c.loop, c.T);
    if (idx.nullity >= 2)
      throw ConfigError("config not in O_reg: critical point with nullity " +
                        std::to_string(idx.nullity));
    out.circles.push_back({c, idx, chi_by_continuation(m, k, c.loop, c.T)});
    last_new = si;
  }
  out.complete = last_new < static_cast<int>(seeds.size()) / 2;
  std::sort(out.circles.begin(), out.circles.end(),
            [](const CriticalCircle& a, const CriticalCircle& b) {
              return a.orbit.S < b.orbit.S;
            });
  return out;
}

// ---------------------------------------------------------------------------
// Cascade shots between circles

namespace detail {

/**
 * Unit negative eigendirections of the deflated free-period Hessian, columns
 * in the raw (q_00, q_01, ..., T) coordinates.
 */
inline MatrixXd unstable_directions(const ManifoldModel& m, double k,
                                    const DiscreteLoop& w, double t_period) {
  const int n = w.N();
  const int dim = 2 * n + 1;
  const MatrixXd h = free_time_hessian(m, k, w, t_period);
  MatrixXd sawtooth = MatrixXd::Zero(dim, 2);
  for (int i = 0; i < n; ++i) {
    const double s = (i % 2 == 0) ? 1.0 : -1.0;
    sawtooth(2 * i, 0) = s;
    sawtooth(2 * i + 1, 1) = s;
  }
  Eigen::HouseholderQR<MatrixXd> qr(sawtooth);
  const MatrixXd complement =
      qr.householderQ() * MatrixXd::Identity(dim, dim).rightCols(dim - 2);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(complement.transpose() * h * complement);
  const double tol = 1e-7 * es.eigenvalues().cwiseAbs().maxCoeff();
  int count = 0;
  while (count < es.eigenvalues().size() && es.eigenvalues()(count) < -tol) ++count;
  return complement * es.eigenvectors().leftCols(count);
}

inline std::pair<DiscreteLoop, double> nudge(const DiscreteLoop& w, double t_period,
                                             const VectorXd& dir, double delta) {
  DiscreteLoop out = w;
  const int n = w.N();
  for (int i = 0; i < n; ++i) {
    out.q(i, 0) += delta * dir(2 * i);
    out.q(i, 1) += delta * dir(2 * i + 1);
  }
  return {out, t_period + delta * dir(2 * n)};
}

struct ShotResult {
  bool resolved = false;
  bool collapsed = false;
  int circle = -1;
  double phase = 0.0;
  Vector2d collapse_point = Vector2d::Zero();
};

/** Descend, polish, and classify the limit of one shot by circle basin. */
inline ShotResult shoot(const ManifoldModel& m, double k, const DiscreteLoop& start,
                        double t0, const std::vector<CriticalCircle>& circles,
                        const MorseOptions& opt) {
  ShotResult r;
  const DescentReport flow = descend_flow(m, k, start, t0, opt.flow_steps, opt.flow_tol);
  if (flow.collapsed) {
    r.resolved = true;
    r.collapsed = true;
    r.collapse_point = flow.loop.q.colwise().mean().transpose();
    return r;
  }
  const CriticalOrbit pol = find_critical(m, k, flow.loop, flow.T);
  if (!pol.converged || pol.residual > opt.land_residual) return r;
  for (int ci = 0; ci < static_cast<int>(circles.size()); ++ci) {
    const CriticalOrbit& c = circles[ci].orbit;
    if (std::abs(pol.T - c.T) > 1e-5 * (1.0 + c.T)) continue;
    if (std::abs(pol.S - c.S) > 1e-5 * (1.0 + std::abs(c.S))) continue;
    const CircleAlignment a = circle_alignment(pol.loop, c.loop);
    if (a.dist < opt.land_dist) {
      r.resolved = true;
      r.circle = ci;
      r.phase = a.shift;
      return r;
    }
  }
  return r;
}

/** Wrapped distance of a landing phase from the f-maximum of the target. */
inline double phase_from_max(double phase) { return std::remainder(phase - 0.5, 1.0); }

/**
 * Zero crossings of the landing-phase offset along a cyclic fan. Entries with
 * no offset (shots that missed the target circle) break the cycle there.
 */
inline int cyclic_crossings(const std::vector<std::pair<bool, double>>& offsets) {
  const int n = static_cast<int>(offsets.size());
  int count = 0;
  for (int j = 0; j < n; ++j) {
    if (offsets[j].first && std::abs(offsets[j].second) < 1e-9) {
      ++count;  // exact arrival at the maximum
      continue;
    }
    const auto& a = offsets[j];
    const auto& b = offsets[(j + 1) % n];
    if (!a.first || !b.first) continue;
    if (std::abs(a.second) < 1e-9 || std::abs(b.second) < 1e-9) continue;
    if (a.second * b.second < 0.0 && std::abs(a.second) + std::abs(b.second) < 0.5)
      ++count;
  }
  return count;
}

}  // namespace detail

/**
 * Number of cascade flow lines from generator g_minus to g_plus (degree
 * difference one), before reduction mod 2. Same-circle pairs are the exact
 * f-flow counts; cross-circle minimum launches shoot the finite unstable
 * sphere at the representative; maximum launches sweep a fan of launch
 * phases and count transversal crossings of the target maximum phase.
 */
inline int cascade_connections(const ManifoldModel& m, double k,
                               const std::vector<CriticalCircle>& circles,
                               const MorseGenerator& g_minus,
                               const MorseGenerator& g_plus,
                               const MorseOptions& opt, int fan_override = 0,
                               double delta_override = 0.0) {
  const int fan = fan_override > 0 ? fan_override : opt.fan;
  const double delta = delta_override > 0.0 ? delta_override : opt.delta;
  if (g_minus.circle == g_plus.circle && g_minus.i_f == g_plus.i_f) return 0;
  if (g_minus.circle == g_plus.circle)
    return (g_minus.i_f == 1 && g_plus.i_f == 0) ? 2 : 0;  // the two arcs

  const CriticalCircle& cm = circles[g_minus.circle];
  const CriticalCircle& cp = circles[g_plus.circle];
  if (cm.orbit.S <= cp.orbit.S + 1e-12) return 0;  // cascades decrease action

  if (g_minus.i_f == 0) {
    // Launch set is the unstable sphere at the f-minimum point itself. The
    // +-delta pair is the full sphere for one negative direction; for higher
    // index it samples the coordinate directions.
    const MatrixXd dirs =
        detail::unstable_directions(m, k, cm.orbit.loop, cm.orbit.T);
    int count = 0;
    for (int d = 0; d < dirs.cols(); ++d)
      for (const double sgn : {1.0, -1.0}) {
        auto [w0, t0] = detail::nudge(cm.orbit.loop, cm.orbit.T,
                                      sgn * dirs.col(d), delta);
        const detail::ShotResult res = detail::shoot(m, k, w0, t0, circles, opt);
        if (!res.resolved)
          throw NonConvergence("cascade endpoint unresolved: refine");
        if (res.circle != g_plus.circle) continue;
        if (g_plus.i_f == 0)
          ++count;  // stable set of the minimum is the whole circle
        else if (std::abs(detail::phase_from_max(res.phase)) < opt.land_dist)
          ++count;  // isolated shot hitting the maximum exactly: non-generic
      }
    return count;
  }

  // f-maximum launch: phases sweep the circle minus the minimum. Offsets by
  // half a step keep the fan off both f-critical phases.
  if (cm.index.i == 0) return 0;  // no transverse unstable direction
  auto launch_point = [&](int j) {
    return shift_fractional(cm.orbit.loop, (j + 0.5) / fan);
  };
  std::vector<VectorXd> dir(fan);
  bool moebius = false;
  for (int j = 0; j < fan; ++j) {
    const MatrixXd dirs =
        detail::unstable_directions(m, k, launch_point(j), cm.orbit.T);
    if (dirs.cols() != 1)
      throw NonConvergence("maximum launch needs a one dimensional unstable bundle");
    dir[j] = dirs.col(0);
    if (j > 0 && dir[j].dot(dir[j - 1]) < 0.0) dir[j] = -dir[j];
  }
  if (dir.back().dot(dir.front()) < 0.0) moebius = true;

  auto land = [&](int j, double sgn) -> std::pair<bool, double> {
    const DiscreteLoop wj = launch_point(j);
    auto [w0, t0] = detail::nudge(wj, cm.orbit.T, sgn * dir[j], delta);
    const detail::ShotResult res = detail::shoot(m, k, w0, t0, circles, opt);
    if (!res.resolved)
      throw NonConvergence("cascade endpoint unresolved: refine");
    if (res.circle != g_plus.circle) return {false, 0.0};
    if (g_plus.i_f == 0) {
      // arrival at an equal-or-lower circle's minimum from a 1-parameter
      // family is non-rigid; a generic configuration never produces one
      throw NonConvergence("non-rigid cascade family: refine");
    }
    return {true, detail::phase_from_max(res.phase)};
  };

  if (moebius) {
    // the unstable bundle is a Moebius band: the two sign branches join into
    // a single cycle of twice the length
    std::vector<std::pair<bool, double>> offsets;
    offsets.reserve(2 * fan);
    for (int j = 0; j < fan; ++j) offsets.push_back(land(j, 1.0));
    for (int j = 0; j < fan; ++j) offsets.push_back(land(j, -1.0));
    return detail::cyclic_crossings(offsets);
  }
  int total = 0;
  for (const double sgn : {1.0, -1.0}) {
    std::vector<std::pair<bool, double>> offsets;
    offsets.reserve(fan);
    for (int j = 0; j < fan; ++j) offsets.push_back(land(j, sgn));
    total += detail::cyclic_crossings(offsets);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Gradient shots of the surface Morse function (critical points at infinity)

namespace detail {

inline Vector2d surface_descend(const FourierTable2& f, Vector2d p) {
  const double dt = 0.02;
  for (int it = 0; it < 40000; ++it) {
    const Vector2d g1 = f.grad(p);
    if (g1.norm() < 1e-12) break;
    const Vector2d p2 = p - 0.5 * dt * g1;
    const Vector2d g2 = f.grad(p2);
    const Vector2d p3 = p - 0.5 * dt * g2;
    const Vector2d g3 = f.grad(p3);
    const Vector2d p4 = p - dt * g3;
    const Vector2d g4 = f.grad(p4);
    p -= (dt / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4);
  }
  return p;
}

/** Cascade count between two critical points at infinity: the surface Morse
 * boundary. Saddle-to-minimum launches the two unstable rays; maximum-to-
 * saddle counts the fan cells whose landing copy jumps across the saddle's
 * stable circle, tracked in cover coordinates. */
inline int surface_connections(const MorseGenerator& g_minus,
                               const MorseGenerator& g_plus, int fan) {
  const FourierTable2 f = surface_morse_function();
  if (g_minus.i_f == 1 && g_plus.i_f == 0) {
    Eigen::SelfAdjointEigenSolver<Matrix2d> es(f.hess(g_minus.at_infinity));
    const Vector2d u = es.eigenvectors().col(0);  // negative curvature direction
    int count = 0;
    for (const double sgn : {1.0, -1.0}) {
      const Vector2d end =
          surface_descend(f, g_minus.at_infinity + sgn * 1e-3 * u);
      Vector2d wrapped = end - g_plus.at_infinity;
      wrapped(0) -= std::round(wrapped(0));
      wrapped(1) -= std::round(wrapped(1));
      if (wrapped.norm() < 1e-6) ++count;
    }
    return count;
  }
  if (g_minus.i_f == 2 && g_plus.i_f == 1) {
    // the saddle at (1/2, 0) has stable circle {x = 1/2}, the one at
    // (0, 1/2) has {y = 1/2}: crossings show as cover-copy jumps in that
    // coordinate between adjacent fan landings
    const int coord = g_plus.at_infinity(0) > 0.25 ? 0 : 1;
    std::vector<int> copy(fan);
    for (int j = 0; j < fan; ++j) {
      const double a = two_pi * (j + 0.37) / fan;
      const Vector2d end = surface_descend(
          f, g_minus.at_infinity + 1e-3 * Vector2d(std::cos(a), std::sin(a)));
      copy[j] = static_cast<int>(std::lround(end(coord)));
    }
    int count = 0;
    for (int j = 0; j < fan; ++j)
      if (copy[j] != copy[(j + 1) % fan]) ++count;
    return count;
  }
  return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Complex assembly

struct CascadeRecord {
  int from = 0, to = 0;  // generator indices
  int raw = 0;           // count before reduction mod 2
};

struct MorseComplex {
  HomotopyClass cls;
  double k = 0.0;
  double action_cap = 0.0;
  int n = 0;
  std::vector<CriticalCircle> circles;
  std::vector<MorseGenerator> gens;
  // boundary[d]: matrix of the map degree d -> d-1 over GF(2),
  // rows indexed by degree d-1 generators, columns by degree d generators
  std::vector<std::vector<std::vector<int>>> boundary;
  std::vector<CascadeRecord> records;
  std::vector<int> betti;
  bool complete = false;
  bool d2_zero = true;
  bool filtration_ok = true;
  bool fan_stable = true;
};

inline int gf2_rank(std::vector<std::vector<int>> rows) {
  if (rows.empty() || rows[0].empty()) return 0;
  const int nc = static_cast<int>(rows[0].size());
  int rank = 0;
  for (int c = 0; c < nc && rank < static_cast<int>(rows.size()); ++c) {
    int pivot = -1;
    for (int r = rank; r < static_cast<int>(rows.size()); ++r)
      if (rows[r][c]) {
        pivot = r;
        break;
      }
    if (pivot < 0) continue;
    std::swap(rows[rank], rows[pivot]);
    for (int r = 0; r < static_cast<int>(rows.size()); ++r)
      if (r != rank && rows[r][c])
        for (int cc = 0; cc < nc; ++cc) rows[r][cc] ^= rows[rank][cc];
    ++rank;
  }
  return rank;
}

namespace detail {

inline int pair_count(const ManifoldModel& m, double k, const MorseComplex& x,
                      int gi_minus, int gi_plus, const MorseOptions& opt, int fan,
                      double delta) {
  const MorseGenerator& a = x.gens[gi_minus];
  const MorseGenerator& b = x.gens[gi_plus];
  if (a.circle < 0 && b.circle < 0)
    return surface_connections(a, b, std::max(opt.m_fan, fan * opt.m_fan / opt.fan));
  if (a.circle < 0) return 0;  // points at infinity sit below every circle
  if (b.circle < 0) {
    // circle-to-infinity cascades end in a collapse; the collapse point is
    // classified by its surface-flow basin. Only the minimum has an open
    // stable set, so isolated shots can certify arrivals there alone.
    if (b.i_f != 0) return 0;
    const CriticalCircle& cm = x.circles[a.circle];
    if (a.i_f != 0) return 0;
    const MatrixXd dirs = unstable_directions(m, k, cm.orbit.loop, cm.orbit.T);
    int count = 0;
    for (int d = 0; d < dirs.cols(); ++d)
      for (const double sgn : {1.0, -1.0}) {
        auto [w0, t0] = nudge(cm.orbit.loop, cm.orbit.T, sgn * dirs.col(d), delta);
        const ShotResult res = shoot(m, k, w0, t0, x.circles, opt);
        if (!res.resolved) throw NonConvergence("cascade endpoint unresolved: refine");
        if (!res.collapsed) continue;
        Vector2d wrapped =
            surface_descend(surface_morse_function(), res.collapse_point) -
            b.at_infinity;
        wrapped(0) -= std::round(wrapped(0));
        wrapped(1) -= std::round(wrapped(1));
        if (wrapped.norm() < 1e-6) ++count;
      }
    return count;
  }
  return cascade_connections(m, k, x.circles, a, b, opt, fan, delta);
}

}  // namespace detail

/**
 * Assemble the chain complex of one homotopy class below an action cap:
 * enumerate circles, attach the two auxiliary generators each (plus the four
 * critical points at infinity in the contractible class), count cascades for
 * every degree-adjacent pair, and reduce. The boundary counts are recomputed
 * with a doubled and quadrupled fan and halved shot offset; any disagreement
 * clears fan_stable.
 */
inline MorseComplex build_complex(const ManifoldModel& m, double k, HomotopyClass cls,
                                  double action_cap, const MorseOptions& opt = {}) {
  MorseComplex x;
  x.cls = cls;
  x.k = k;
  x.action_cap = action_cap;
  x.n = opt.n;

  Enumeration en = enumerate_critical(m, k, cls, action_cap, opt);
  x.circles = std::move(en.circles);
  x.complete = en.complete;

  for (int ci = 0; ci < static_cast<int>(x.circles.size()); ++ci) {
    const CriticalCircle& c = x.circles[ci];
    x.gens.push_back({ci, 0, c.index.i, c.orbit.S, Vector2d::Zero()});
    x.gens.push_back({ci, 1, c.index.i + 1, c.orbit.S, Vector2d::Zero()});
  }
  if (cls.trivial())
    for (const MorseGenerator& g : generators_at_infinity()) x.gens.push_back(g);
  std::sort(x.gens.begin(), x.gens.end(),
            [](const MorseGenerator& a, const MorseGenerator& b) {
              if (a.degree != b.degree) return a.degree < b.degree;
              if (a.action != b.action) return a.action < b.action;
              if (a.circle != b.circle) return a.circle < b.circle;
              return a.i_f < b.i_f;
            });

  int maxdeg = 0;
  for (const MorseGenerator& g : x.gens) maxdeg = std::max(maxdeg, g.degree);
  std::vector<std::vector<int>> by_deg(maxdeg + 1);
  for (int gi = 0; gi < static_cast<int>(x.gens.size()); ++gi)
    by_deg[x.gens[gi].degree].push_back(gi);

  x.boundary.assign(maxdeg + 1, {});
  for (int d = 1; d <= maxdeg; ++d) {
    x.boundary[d].assign(by_deg[d - 1].size(),
                         std::vector<int>(by_deg[d].size(), 0));
    for (size_t col = 0; col < by_deg[d].size(); ++col)
      for (size_t row = 0; row < by_deg[d - 1].size(); ++row) {
        const int gi_minus = by_deg[d][col];
        const int gi_plus = by_deg[d - 1][row];
        const int raw =
            detail::pair_count(m, k, x, gi_minus, gi_plus, opt, opt.fan, opt.delta);
        x.records.push_back({gi_minus, gi_plus, raw});
        x.boundary[d][row][col] = raw % 2;
        if (raw % 2 == 1 &&
            !(x.gens[gi_plus].action < x.gens[gi_minus].action - 1e-12))
          x.filtration_ok = false;
        for (const int factor : {2, 4}) {
          const int again = detail::pair_count(m, k, x, gi_minus, gi_plus, opt,
                                               opt.fan * factor, opt.delta / factor);
          if (again != raw) x.fan_stable = false;
        }
      }
  }

  // d^2 = 0 over GF(2)
  for (int d = 2; d <= maxdeg; ++d) {
    const auto& b1 = x.boundary[d - 1];  // d-1 -> d-2
    const auto& b2 = x.boundary[d];      // d   -> d-1
    if (b1.empty() || b2.empty()) continue;
    for (size_t r = 0; r < b1.size(); ++r)
      for (size_t c = 0; c < b2[0].size(); ++c) {
        int acc = 0;
        for (size_t j = 0; j < b2.size(); ++j) acc ^= b1[r][j] & b2[j][c];
        if (acc) x.d2_zero = false;
      }
  }

  x.betti.assign(maxdeg + 1, 0);
  std::vector<int> rank(maxdeg + 2, 0);
  for (int d = 1; d <= maxdeg; ++d) rank[d] = gf2_rank(x.boundary[d]);
  for (int d = 0; d <= maxdeg; ++d)
    x.betti[d] = static_cast<int>(by_deg[d].size()) - rank[d] - rank[d + 1];
  return x;
}

/** Betti numbers over GF(2) of the class-alpha complex below the cap. */
inline std::vector<int> homology(const ManifoldModel& m, double k, HomotopyClass cls,
                                 double action_cap, const MorseOptions& opt = {}) {
  return build_complex(m, k, cls, action_cap, opt).betti;
}

}  // namespace magflow

#endif
