#ifndef MAGFLOW_LOOP_HPP
#define MAGFLOW_LOOP_HPP

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "magflow/geometry.hpp"

namespace magflow {

using Eigen::MatrixX2d;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace spectral {

/**
 * Differentiation matrix for 1-periodic functions on the uniform even-N grid
 * t_i = i/N: D_{jk} = pi (-1)^{j-k} cot(pi (j-k)/N), zero diagonal. Exactly
 * antisymmetric, exact on trigonometric polynomials below the Nyquist mode.
 */
inline const MatrixXd& diff_matrix(int n) {
  static std::map<int, MatrixXd> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  MatrixXd d = MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      if (j == k) continue;
      const int r = j - k;
      const double sgn = (r % 2 == 0) ? 1.0 : -1.0;
      d(j, k) = std::numbers::pi * sgn / std::tan(std::numbers::pi * double(r) / n);
    }
  return cache.emplace(n, std::move(d)).first->second;
}

/** Cached (I + D^T D)^{-1}; the flat-metric W^{1,2} solve kernel. */
inline const MatrixXd& w12_inverse(int n) {
  static std::map<int, MatrixXd> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  const MatrixXd& d = diff_matrix(n);
  MatrixXd w = MatrixXd::Identity(n, n) + d.transpose() * d;
  return cache.emplace(n, w.ldlt().solve(MatrixXd::Identity(n, n))).first->second;
}

/** Even-N trigonometric cardinal function: value of the interpolant basis. */
inline double cardinal(int n, double dt) {
  const double s = std::sin(std::numbers::pi * dt);
  if (std::abs(s) < 1e-13) return 1.0;  // at (a copy of) the node itself
  return std::sin(n * std::numbers::pi * dt) / std::tan(std::numbers::pi * dt) / n;
}

}  // namespace spectral

/**
 * Loop on the torus stored as N uniform samples of a lift: q_i = q(i/N) in
 * cover coordinates, with closure q(t+1) = q(t) + (m1,m2). N even, >= 16.
 */
struct DiscreteLoop {
  HomotopyClass cls;
  MatrixX2d q;

  int N() const { return static_cast<int>(q.rows()); }
};

/** Tangent vector at a loop; b is the scalar slot of Lambda x R factors. */
struct TangentField {
  MatrixX2d v;
  double b = 0.0;
};

inline void check_loop(const DiscreteLoop& w) {
  const int n = w.N();
  if (n < 16 || n % 2 != 0)
    throw ConfigError("loop grid must be even and at least 16, got " + std::to_string(n));
}

inline DiscreteLoop make_loop(HomotopyClass cls, int n,
                              const std::function<Vector2d(double)>& periodic_part) {
  DiscreteLoop w;
  w.cls = cls;
  w.q.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / n;
    w.q.row(i) = (periodic_part(t) + t * cls.vec()).transpose();
  }
  check_loop(w);
  return w;
}

inline DiscreteLoop straight_loop(HomotopyClass cls, int n, const Vector2d& base) {
  return make_loop(cls, n, [&](double) { return base; });
}

/** Samples of the periodic part q(t) - t*(m1,m2). */
inline MatrixX2d periodic_part(const DiscreteLoop& w) {
  MatrixX2d p = w.q;
  const int n = w.N();
  for (int i = 0; i < n; ++i) p.row(i) -= (double(i) / n) * w.cls.vec().transpose();
  return p;
}

/** Spectral derivative samples of the lift (winding slope included). */
inline MatrixX2d loop_derivative(const DiscreteLoop& w) {
  const MatrixXd& d = spectral::diff_matrix(w.N());
  MatrixX2d v = d * periodic_part(w);
  v.rowwise() += w.cls.vec().transpose();
  return v;
}

/** Spectral derivative of a periodic tangent field along the loop. */
inline MatrixX2d field_derivative(const DiscreteLoop& w, const MatrixX2d& f) {
  return spectral::diff_matrix(w.N()) * f;
}

/** Cardinal interpolation of a periodic sample field at arbitrary time. */
inline Vector2d field_at(const MatrixX2d& f, double t) {
  const int n = static_cast<int>(f.rows());
  Vector2d acc = Vector2d::Zero();
  for (int j = 0; j < n; ++j)
    acc += spectral::cardinal(n, t - double(j) / n) * f.row(j).transpose();
  return acc;
}

/** Cover point of the loop at arbitrary time, exact below the Nyquist band. */
inline Vector2d loop_at(const DiscreteLoop& w, double t) {
  return field_at(periodic_part(w), t) + t * w.cls.vec();
}

/** Time reversal: lift r(t) = q(-t) = q(1-t) - (m1,m2); the class reverses. */
inline DiscreteLoop reverse_loop(const DiscreteLoop& w) {
  DiscreteLoop r;
  r.cls = w.cls.reversed();
  const int n = w.N();
  r.q.resize(n, 2);
  r.q.row(0) = w.q.row(0);
  for (int i = 1; i < n; ++i)
    r.q.row(i) = w.q.row(n - i) - w.cls.vec().transpose();
  return r;
}

/** Loop at shifted parameter t -> t + s/N (s nodes), same class. */
inline DiscreteLoop shift_loop(const DiscreteLoop& w, int s) {
  const int n = w.N();
  DiscreteLoop r;
  r.cls = w.cls;
  r.q.resize(n, 2);
  s = ((s % n) + n) % n;
  for (int i = 0; i < n; ++i) {
    const int j = i + s;
    r.q.row(i) = w.q.row(j % n) + double(j / n) * w.cls.vec().transpose();
  }
  return r;
}

/** Trigonometric resampling of the periodic part onto an N'-point grid. */
inline DiscreteLoop resample(const DiscreteLoop& w, int n_new) {
  check_loop(w);
  const int n = w.N();
  const MatrixX2d per = periodic_part(w);
  DiscreteLoop r;
  r.cls = w.cls;
  r.q.resize(n_new, 2);
  for (int i = 0; i < n_new; ++i) {
    const double t = double(i) / n_new;
    Vector2d acc = Vector2d::Zero();
    for (int j = 0; j < n; ++j)
      acc += spectral::cardinal(n, t - double(j) / n) * per.row(j).transpose();
    r.q.row(i) = (acc + t * w.cls.vec()).transpose();
  }
  check_loop(r);
  return r;
}

/** Kinetic loop energy int_0^1 |q'|_g^2 dt by the shared-grid quadrature. */
inline double loop_energy(const ManifoldModel& m, const DiscreteLoop& w) {
  check_loop(w);
  const MatrixX2d v = loop_derivative(w);
  double acc = 0.0;
  for (int i = 0; i < w.N(); ++i)
    acc += m.conformal(w.q.row(i).transpose()) * v.row(i).squaredNorm();
  return acc / w.N();
}

/** Covariant derivative of a periodic field along the loop. */
inline MatrixX2d covariant_derivative(const ManifoldModel& m, const DiscreteLoop& w,
                                      const MatrixX2d& zeta) {
  MatrixX2d dz = field_derivative(w, zeta);
  if (m.flat_metric()) return dz;
  const MatrixX2d v = loop_derivative(w);
  for (int i = 0; i < w.N(); ++i) {
    const auto gamma = m.christoffel(w.q.row(i).transpose());
    for (int k = 0; k < 2; ++k)
      dz(i, k) += v.row(i) * gamma[k] * zeta.row(i).transpose();
  }
  return dz;
}

/**
 * W^{1,2} inner product on T(Lambda M x R):
 * <<(zeta,b),(theta,e)>> = int <zeta,theta>_g + <cov zeta, cov theta>_g dt + b e.
 */
inline double w12_inner(const ManifoldModel& m, const DiscreteLoop& w,
                        const TangentField& a, const TangentField& b) {
  check_loop(w);
  const MatrixX2d da = covariant_derivative(m, w, a.v);
  const MatrixX2d db = covariant_derivative(m, w, b.v);
  double acc = 0.0;
  for (int i = 0; i < w.N(); ++i) {
    const double c = m.conformal(w.q.row(i).transpose());
    acc += c * (a.v.row(i).dot(b.v.row(i)) + da.row(i).dot(db.row(i)));
  }
  return acc / w.N() + a.b * b.b;
}

/**
 * Cap-area term int_C qbar^* sigma evaluated through the fixed cover
 * primitive: quadrature of theta(q~) against q' plus the holonomy constant of
 * the class reference based at 0. Lift-independent iff flux_lift_invariant.
 */
inline double cap_flux(const ManifoldModel& m, const DiscreteLoop& w) {
  check_loop(w);
  const MatrixX2d v = loop_derivative(w);
  double acc = 0.0;
  for (int i = 0; i < w.N(); ++i)
    acc += m.primitive_at(w.q.row(i).transpose()).dot(v.row(i).transpose());
  acc /= w.N();
  return acc + holonomy_constant(m, ReferenceLoop{w.cls, Vector2d::Zero()});
}

inline bool flux_lift_invariant(const ManifoldModel& m, HomotopyClass cls) {
  return m.B == 0.0 || cls.trivial() || cls.m2 == 0;
}

/** Best time-shift and lattice offset alignment of two same-class loops. */
struct LoopAlignment {
  int shift = 0;
  Vector2d lattice = Vector2d::Zero();
  double rms = 0.0;
};

inline LoopAlignment align_loops(const DiscreteLoop& a, const DiscreteLoop& b) {
  const int n = a.N();
  LoopAlignment best;
  best.rms = 1e300;
  for (int s = 0; s < n; ++s) {
    const DiscreteLoop as = shift_loop(a, s);
    const Vector2d mean = (as.q - b.q).colwise().mean().transpose();
    const Vector2d lat(std::round(mean.x()), std::round(mean.y()));
    const MatrixX2d diff = (as.q - b.q).rowwise() - lat.transpose();
    const double rms = std::sqrt(diff.squaredNorm() / n);
    if (rms < best.rms) best = {s, lat, rms};
  }
  return best;
}

/** Continuous alignment phase of `a` against `b` in [0,1): node shift refined
 *  by quadratic interpolation of the mismatch around the best shift. */
inline double alignment_phase(const DiscreteLoop& a, const DiscreteLoop& b) {
  const int n = a.N();
  auto mismatch = [&](int s) {
    const DiscreteLoop as = shift_loop(a, s);
    const Vector2d mean = (as.q - b.q).colwise().mean().transpose();
    const Vector2d lat(std::round(mean.x()), std::round(mean.y()));
    const MatrixX2d diff = (as.q - b.q).rowwise() - lat.transpose();
    return diff.squaredNorm() / n;
  };
  int s0 = 0;
  double m0 = 1e300;
  for (int s = 0; s < n; ++s) {
    const double ms = mismatch(s);
    if (ms < m0) {
      m0 = ms;
      s0 = s;
    }
  }
  const double ml = mismatch((s0 + n - 1) % n), mr = mismatch((s0 + 1) % n);
  const double den = ml - 2.0 * m0 + mr;
  double frac = 0.0;
  if (den > 1e-300) frac = 0.5 * (ml - mr) / den;
  double phase = (s0 + frac) / n;
  phase -= std::floor(phase);
  return phase;
}

inline void dump_loop_csv(const std::string& path, const DiscreteLoop& w,
                          std::optional<double> period = std::nullopt) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << "# class " << w.cls.m1 << " " << w.cls.m2 << "\n";
  if (period) out << "# T " << *period << "\n";
  out << "t,x,y\n";
  out.precision(17);
  for (int i = 0; i < w.N(); ++i)
    out << double(i) / w.N() << "," << w.q(i, 0) << "," << w.q(i, 1) << "\n";
}

}  // namespace magflow

#endif
