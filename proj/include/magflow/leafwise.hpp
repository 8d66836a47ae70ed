#ifndef MAGFLOW_LEAFWISE_HPP
#define MAGFLOW_LEAFWISE_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "magflow/rabinowitz.hpp"
#include "magflow/rf_flow.hpp"

namespace magflow {

/**
 * Leafwise intersections via the perturbed functional
 *
 *   A^F(x, eta) = int x^*(p dq + theta) - eta int chi(t) G0(x) dt - int F(t, x) dt,
 *
 * with G0 = beta(H - k) cutting out the level set and F a compactly
 * supported space-time bump generating the Hamiltonian diffeomorphism
 * psi = phi^1_F. Conventions: chi is supported in (0, 1/2) and F(t, .)
 * vanishes for t <= 1/2, so a critical point runs along the level for the
 * first half period and rides X_F for the second. The junction y = x(1/2)
 * then satisfies psi(y) = x(0) = phi^H_{-eta}(y), which is what the
 * verification below checks end to end.
 */

/** Normalized bump chi on S^1 with support (t0, t0 + width) inside (0, 1/2). */
struct ChiProfile {
  double t0 = 0.02;
  double width = 0.46;
  double scale = 0.0;  // set so that int_0^1 chi = 1

  explicit ChiProfile(double t0_ = 0.02, double width_ = 0.46) : t0(t0_), width(width_) {
    if (!(t0 > 0.0) || !(width > 0.0) || !(t0 + width < 0.5))
      throw ConfigError("chi support must sit strictly inside (0, 1/2)");
    const int n = 1 << 15;  // periodic rectangle rule, spectrally accurate
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += raw(double(i) / n);
    scale = n / acc;
  }

  double raw(double t) const {
    const double u = (t - std::floor(t) - t0) / width;
    return (u > 0.0 && u < 1.0) ? bump01(u) : 0.0;
  }

  double operator()(double t) const { return scale * raw(t); }

  /** Cumulative integral int_0^t chi by composite Simpson; t in [0, 1]. */
  double cumulative(double t) const {
    if (t <= t0) return 0.0;
    if (t >= t0 + width) return 1.0;
    const int panels = 2 * std::max(64, int(4096 * (t - t0)));
    const double h = (t - t0) / panels;
    double acc = (*this)(t0) + (*this)(t);
    for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * (*this)(t0 + i * h);
    return acc * h / 3.0;
  }
};

/** beta(u) = u plateau(u / window): beta(0) = 0, beta'(0) = 1, support (-window, window). */
struct BetaProfile {
  double window = 0.5;

  double operator()(double u) const {
    const double v = u / window;
    return (std::abs(v) < 1.0) ? u * plateau(v) : 0.0;
  }

  double d(double u) const {
    const double v = u / window;
    return (std::abs(v) < 1.0) ? plateau(v) + v * plateau_d(v) : 0.0;
  }
};

/**
 * Perturbation F(t, q, p) = amp tau(t) env(p): tau = bump01(2t - 1) is active
 * on (1/2, 1) only, and env is a radial plateau of the stated width around
 * p_center. F is q-independent, so X_F = (F_p, -b J F_p).
 */
struct FSpec {
  double amp = 0.0;
  Vector2d p_center = Vector2d::Zero();
  double p_width = 0.5;
  double beta_window = 0.0;  // 0 = pick from the sampled energy range

  std::uint64_t hash() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.17g|%.17g|%.17g|%.17g|%.17g", amp, p_center.x(),
                  p_center.y(), p_width, beta_window);
    return fnv1a(buf);
  }
};

inline double f_time(double t) {
  const double u = 2.0 * (t - std::floor(t)) - 1.0;
  return (u > 0.0 && u < 1.0) ? bump01(u) : 0.0;
}

inline double f_envelope(const FSpec& f, const Vector2d& p) {
  const double s = (p - f.p_center).squaredNorm() / (f.p_width * f.p_width);
  return (s < 1.0) ? std::exp(1.0 - 1.0 / (1.0 - s)) : 0.0;
}

inline Vector2d f_envelope_dp(const FSpec& f, const Vector2d& p) {
  const double w2 = f.p_width * f.p_width;
  const double s = (p - f.p_center).squaredNorm() / w2;
  if (s >= 1.0) return Vector2d::Zero();
  const double e = std::exp(1.0 - 1.0 / (1.0 - s));
  return e * (-1.0 / ((1.0 - s) * (1.0 - s))) * (2.0 / w2) * (p - f.p_center);
}

inline double f_value(const FSpec& f, double t, const Vector2d& p) {
  return f.amp * f_time(t) * f_envelope(f, p);
}

inline Vector2d f_dp(const FSpec& f, double t, const Vector2d& p) {
  return f.amp * f_time(t) * f_envelope_dp(f, p);
}

/** X_F in (q, p) blocks; F has no q-dependence, so only the twist acts on p. */
inline Vector4d f_field(const ManifoldModel& m, const FSpec& f, double t,
                        const Vector4d& x) {
  const Vector2d q = x.head<2>(), p = x.tail<2>();
  const Vector2d xq = f_dp(f, t, p);
  Vector4d out;
  out << xq, -m.sigma_density(q) * Vector2d(-xq.y(), xq.x());
  return out;
}

struct MoserPair {
  ChiProfile chi;
  BetaProfile beta;
  FSpec f;
  double k = 0.0;
};

namespace detail {

/** Sup of |H - k| over the tube the perturbation can reach: q free, p in the
 * closed F-envelope disc. */
inline double energy_range_on_support(const ManifoldModel& m, double k, const FSpec& f) {
  double sup = 0.0;
  const int nq = 16, nr = 8, na = 16;
  for (int ix = 0; ix < nq; ++ix)
    for (int iy = 0; iy < nq; ++iy) {
      const Vector2d q(double(ix) / nq, double(iy) / nq);
      for (int ir = 0; ir <= nr; ++ir)
        for (int ia = 0; ia < na; ++ia) {
          const double r = f.p_width * ir / nr;
          const double a = 2.0 * M_PI * ia / na;
          const Vector2d p = f.p_center + r * Vector2d(std::cos(a), std::sin(a));
          sup = std::max(sup, std::abs(hamiltonian(m, q, p) - k));
        }
    }
  return sup;
}

}  // namespace detail

/**
 * Assembles (G, F) for the level k and checks the admissibility invariants:
 * the chi normalization on an independent grid, and X_{G0} = X_H on sampled
 * level-set points. The beta window must exceed the energy range over the
 * F-support, else the cutoff truncates states the perturbation can reach.
 */
inline MoserPair build_moser_pair(const ManifoldModel& m, double k, const FSpec& f) {
  MoserPair mp;
  mp.f = f;
  mp.k = k;

  const int n = 9999;  // independent of the constructor grid
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += mp.chi(double(i) / n);
  if (std::abs(acc / n - 1.0) > 1e-12)
    throw ConfigError("chi normalization drifted beyond 1e-12");

  const double range = detail::energy_range_on_support(m, k, f);
  if (f.beta_window > 0.0) {
    if (f.beta_window <= range)
      throw ConfigError("beta window sits below the sampled energy range of the "
                        "perturbation support");
    mp.beta.window = f.beta_window;
  } else {
    mp.beta.window = 2.0 * range + 1e-3;
  }

  // X_{G0} = beta'(H - k) X_H must reduce to X_H on the level set.
  const int nq = 12;
  for (int ix = 0; ix < nq; ++ix)
    for (int iy = 0; iy < nq; ++iy) {
      const Vector2d q(double(ix) / nq, double(iy) / nq);
      const double r2 = 2.0 * m.conformal(q) * (k - m.U(q));
      if (r2 <= 0.0) continue;  // empty fiber under the level
      for (int ia = 0; ia < 4; ++ia) {
        const double a = M_PI * ia / 2.0;
        const Vector2d p = std::sqrt(r2) * Vector2d(std::cos(a), std::sin(a));
        Vector4d z;
        z << q, p;
        const Vector4d xh = hamiltonian_field(m, z);
        const Vector4d xg = mp.beta.d(hamiltonian(m, q, p) - k) * xh;
        if ((xg - xh).cwiseAbs().maxCoeff() > 1e-10)
          throw ConfigError("X_G0 disagrees with X_H on the level set");
      }
    }
  return mp;
}

inline double perturbed_action(const ManifoldModel& m, const MoserPair& mp,
                               const RabinowitzPoint& x) {
  check_point(x);
  const int n = x.q.N();
  const MatrixX2d v = loop_derivative(x.q);
  double acc = 0.0, g_mean = 0.0, f_mean = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / n;
    const Vector2d q = x.q.q.row(i).transpose();
    const Vector2d p = x.p.row(i).transpose();
    acc += (p + m.primitive_at(q)).dot(v.row(i).transpose());
    g_mean += mp.chi(t) * mp.beta(hamiltonian(m, q, p) - mp.k);
    f_mean += f_value(mp.f, t, p);
  }
  return (acc - x.eta * g_mean - f_mean) / n +
         holonomy_constant(m, {x.q.cls, Vector2d::Zero()});
}

/** Exact partials of the discretized perturbed action (1/N weights included). */
inline RabinowitzDifferential perturbed_differential(const ManifoldModel& m,
                                                     const MoserPair& mp,
                                                     const RabinowitzPoint& x) {
  check_point(x);
  const int n = x.q.N();
  const MatrixX2d v = loop_derivative(x.q);
  RabinowitzDifferential d;
  d.dq.resize(n, 2);
  d.dp.resize(n, 2);
  double g_mean = 0.0;

  const MatrixX2d dpth = spectral::diff_matrix(n) * x.p +
                         detail::primitive_time_derivative(m, x.q);

  for (int i = 0; i < n; ++i) {
    const double t = double(i) / n;
    const Vector2d q = x.q.q.row(i).transpose();
    const Vector2d p = x.p.row(i).transpose();
    const Matrix2d a = m.primitive_jacobian(q);
    const double h = hamiltonian(m, q, p);
    const double w = x.eta * mp.chi(t) * mp.beta.d(h - mp.k);
    d.dq.row(i) = (a.transpose() * v.row(i).transpose() -
                   w * hamiltonian_dq(m, q, p) - dpth.row(i).transpose())
                      .transpose() /
                  n;
    d.dp.row(i) = (v.row(i).transpose() - w * hamiltonian_dp(m, q, p) -
                   f_dp(mp.f, t, p))
                      .transpose() /
                  n;
    g_mean += mp.chi(t) * mp.beta(h - mp.k);
  }
  d.deta = -g_mean / n;
  return d;
}

/** Pointwise defect size: gradient with the quadrature weight removed. */
inline double perturbed_residual(const ManifoldModel& m, const MoserPair& mp,
                                 const RabinowitzPoint& x) {
  const RabinowitzDifferential d = perturbed_differential(m, mp, x);
  const int n = x.q.N();
  return std::sqrt(n * (d.dq.squaredNorm() + d.dp.squaredNorm()) + d.deta * d.deta);
}

/**
 * Seed for the leafwise solve at F = 0: the closed orbit (w, T) traversed
 * with speed eta chi(t), starting at loop phase c. This satisfies the
 * critical equation exactly in the continuum, so its collocation defect is
 * only the spectral interpolation error.
 */
inline RabinowitzPoint reparametrized_orbit(const ManifoldModel& m, const ChiProfile& chi,
                                            const DiscreteLoop& w, double t_period,
                                            double phase, int n) {
  const RabinowitzPoint z = z_lift(m, w, t_period, +1);
  const MatrixX2d zq = periodic_part(w);
  RabinowitzPoint x;
  x.eta = t_period;
  x.q.cls = w.cls;
  x.q.q.resize(n, 2);
  x.p.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double s = chi.cumulative(double(i) / n) + phase;
    x.q.q.row(i) = (field_at(zq, s) + s * w.cls.vec()).transpose();
    x.p.row(i) = field_at(z.p, s).transpose();
  }
  // keep the stored lift anchored in the fundamental domain
  const Vector2d shift = x.q.q.row(0).transpose().array().floor().matrix();
  for (int i = 0; i < n; ++i) x.q.q.row(i) -= shift.transpose();
  return x;
}

struct LeafwiseOptions {
  int n = 96;               // collocation grid for the solve
  int max_newton = 60;
  double tol = 1e-10;       // pointwise defect at acceptance
  double verify_tol = 1e-5;
  int flow_steps_per_unit = 20000;  // RK4 resolution of the verification flows
  double window_pad = 0.5;  // extra leaf time around |eta| searched
  int seed_phases = 8;      // orbit phases tried until one converges
};

struct LeafwiseWitness {
  RabinowitzPoint x;
  double eta = 0.0;
  Vector4d junction = Vector4d::Zero();  // y = x(1/2)
  Vector4d psi_y = Vector4d::Zero();
  double verification_distance = 0.0;
  bool verified = false;
  double residual = 0.0;
  int newton_steps = 0;
  std::uint64_t f_spec_hash = 0;
};

namespace detail {

inline VectorXd perturbed_gradient_vec(const ManifoldModel& m, const MoserPair& mp,
                                       const VectorXd& u, HomotopyClass cls) {
  return pack_differential(perturbed_differential(m, mp, unpack_point(u, cls)));
}

/** Damped Newton on the exact gradient; the Jacobian is a central difference
 * of it, solved by a complete orthogonal decomposition so the F = 0 critical
 * manifolds do not stall the iteration. */
inline bool newton_polish(const ManifoldModel& m, const MoserPair& mp,
                          RabinowitzPoint& x, const LeafwiseOptions& opt, int& steps) {
  const HomotopyClass cls = x.q.cls;
  VectorXd u = pack_point(x);
  const int dim = int(u.size());
  VectorXd g = perturbed_gradient_vec(m, mp, u, cls);
  const int n = x.q.N();
  auto defect = [&](const VectorXd& grad) {
    return std::sqrt(n * grad.head(4 * n).squaredNorm() + grad(4 * n) * grad(4 * n));
  };
  double best = defect(g);
  for (steps = 0; steps < opt.max_newton && best > opt.tol; ++steps) {
    MatrixXd jac(dim, dim);
    const double h = 1e-6;
    for (int j = 0; j < dim; ++j) {
      VectorXd up = u, um = u;
      up(j) += h;
      um(j) -= h;
      jac.col(j) = (perturbed_gradient_vec(m, mp, up, cls) -
                    perturbed_gradient_vec(m, mp, um, cls)) /
                   (2.0 * h);
    }
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(jac);
    const VectorXd step = cod.solve(-g);
    double alpha = 1.0;
    bool moved = false;
    for (int back = 0; back < 25; ++back, alpha *= 0.5) {
      const VectorXd trial = u + alpha * step;
      const VectorXd gt = perturbed_gradient_vec(m, mp, trial, cls);
      const double dt = defect(gt);
      if (dt < best * (1.0 - 0.25 * alpha) || dt < opt.tol) {
        u = trial;
        g = gt;
        best = dt;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  x = unpack_point(u, cls);
  return best <= opt.tol;
}

/** psi(y): integrate X_F over its active half t in [1/2, 1]. */
inline Vector4d apply_psi(const ManifoldModel& m, const FSpec& f, const Vector4d& y,
                          int steps) {
  Vector4d z = y;
  const double h = 0.5 / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = 0.5 + i * h;
    const Vector4d k1 = f_field(m, f, t, z);
    const Vector4d k2 = f_field(m, f, t + 0.5 * h, z + 0.5 * h * k1);
    const Vector4d k3 = f_field(m, f, t + 0.5 * h, z + 0.5 * h * k2);
    const Vector4d k4 = f_field(m, f, t + h, z + h * k3);
    z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return z;
}

/** Distance on T*T^2: q compared modulo the lattice. */
inline double state_distance(const Vector4d& a, const Vector4d& b) {
  Vector2d dq = a.head<2>() - b.head<2>();
  dq.x() -= std::round(dq.x());
  dq.y() -= std::round(dq.y());
  return std::sqrt(dq.squaredNorm() + (a.tail<2>() - b.tail<2>()).squaredNorm());
}

/** min over t in [-span, span] of |phi_t^H(y) - target|, coarse scan plus a
 * golden-section refinement of the best bracket. */
inline double leaf_distance(const ManifoldModel& m, const Vector4d& y,
                            const Vector4d& target, double span, int steps_per_unit) {
  double best = state_distance(y, target);
  double best_t = 0.0;
  const int steps = std::max(64, int(span * steps_per_unit));
  for (int dir = -1; dir <= 1; dir += 2) {
    const MatrixXd traj = hamiltonian_trajectory(m, y, dir * span, steps);
    for (int i = 1; i <= steps; ++i) {
      const double d = state_distance(traj.row(i).transpose(), target);
      if (d < best) {
        best = d;
        best_t = dir * span * i / steps;
      }
    }
  }
  const double h = span / steps;
  double lo = best_t - h, hi = best_t + h;
  auto eval = [&](double t) {
    if (std::abs(t) < 1e-14) return state_distance(y, target);
    const int k = std::max(64, int(std::abs(t) * steps_per_unit));
    return state_distance(hamiltonian_flow(m, y, t, k), target);
  };
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
  double fa = eval(a), fb = eval(b);
  for (int it = 0; it < 50; ++it) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - gr * (hi - lo);
      fa = eval(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + gr * (hi - lo);
      fb = eval(b);
    }
  }
  return std::min({best, fa, fb});
}

}  // namespace detail

/**
 * End-to-end check of the leafwise property for a candidate critical point:
 * psi(y) is computed by integrating X_F over its active half from the
 * junction y = x(1/2), then matched against the H-flow leaf through y on a
 * time window covering |eta|. Failures are reported, never hidden.
 */
inline LeafwiseWitness verify_witness(const ManifoldModel& m, const MoserPair& mp,
                                      const RabinowitzPoint& x,
                                      const LeafwiseOptions& opt = {}) {
  check_point(x);
  const int n = x.q.N();
  if (n % 2 != 0) throw ConfigError("junction sample needs an even grid");
  LeafwiseWitness wit;
  wit.x = x;
  wit.eta = x.eta;
  wit.residual = perturbed_residual(m, mp, x);
  wit.f_spec_hash = mp.f.hash();
  wit.junction.head<2>() = x.q.q.row(n / 2).transpose();
  wit.junction.tail<2>() = x.p.row(n / 2).transpose();
  wit.psi_y = detail::apply_psi(m, mp.f, wit.junction, std::max(2000, opt.n * 40));
  const double span = std::abs(x.eta) + opt.window_pad;
  wit.verification_distance =
      detail::leaf_distance(m, wit.junction, wit.psi_y, span, opt.flow_steps_per_unit);
  wit.verified = wit.verification_distance < opt.verify_tol;
  return wit;
}

/**
 * Newton solve of the perturbed critical equation with an amplitude homotopy
 * from the F = 0 solution given by the seed. Nonconvergence throws; a
 * converged point whose flow verification misses the tolerance is returned
 * with verified = false.
 */
inline LeafwiseWitness find_leafwise(const ManifoldModel& m, const MoserPair& mp,
                                     const RabinowitzPoint& seed,
                                     const LeafwiseOptions& opt = {}) {
  check_point(seed);
  static const double fractions[] = {0.25, 0.5, 0.75, 1.0};
  RabinowitzPoint x = seed;
  int total_steps = 0;
  bool ok = true;
  for (double frac : fractions) {
    MoserPair stage = mp;
    stage.f.amp = mp.f.amp * frac;
    int steps = 0;
    ok = detail::newton_polish(m, stage, x, opt, steps);
    total_steps += steps;
    if (!ok) break;
    if (mp.f.amp == 0.0) break;  // nothing to continue in
  }
  if (!ok) throw NonConvergence("leafwise solve did not converge");
  LeafwiseWitness wit = verify_witness(m, mp, x, opt);
  wit.newton_steps = total_steps;
  return wit;
}

/**
 * Convenience driver: seeds the homotopy from several phases of a closed
 * orbit on the level and returns the first verified witness.
 */
inline LeafwiseWitness find_leafwise_from_orbit(const ManifoldModel& m,
                                                const MoserPair& mp,
                                                const DiscreteLoop& w, double t_period,
                                                const LeafwiseOptions& opt = {}) {
  LeafwiseWitness last;
  bool have = false;
  for (int j = 0; j < opt.seed_phases; ++j) {
    const double phase = double(j) / opt.seed_phases;
    const RabinowitzPoint seed =
        reparametrized_orbit(m, mp.chi, w, t_period, phase, opt.n);
    try {
      last = find_leafwise(m, mp, seed, opt);
      have = true;
      if (last.verified) return last;
    } catch (const NonConvergence&) {
    }
  }
  if (!have) throw NonConvergence("leafwise solve did not converge from any phase");
  return last;  // honest failed witness: converged but unverified
}

}  // namespace magflow

#endif
