#ifndef MAGFLOW_FREE_TIME_HPP
#define MAGFLOW_FREE_TIME_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "magflow/loop.hpp"

namespace magflow {

/**
 * Free-period action of a loop gamma with period T at level k:
 *
 *   S_k(gamma, T) = int_0^1 |q'|_g^2 / (2T) - T U(q) + T k dt
 *                   + int gamma^* theta + I(alpha, theta).
 *
 * Everything below differentiates the discretized functional itself, so
 * differentials, gradients and Hessians are exact for the discrete object and
 * Newton converges to machine precision.
 */

namespace detail {

/** Per-sample integrand data f(q_i, v_i) and its partial derivatives. */
struct SampleTerms {
  double f;
  Vector2d f_q, f_v;
  Matrix2d f_vv, f_vq, f_qq;  // f_vq(a,c) = d2 f / dv_a dq_c
  double e;                   // kinetic/potential energy at the sample
};

inline SampleTerms sample_terms(const ManifoldModel& m, double k, const Vector2d& q,
                                const Vector2d& v, double t_period) {
  SampleTerms s;
  const double c = m.conformal(q);
  const double v2 = v.squaredNorm();
  const Vector2d phi_q = m.phi.grad(q);
  const Matrix2d phi_qq = m.phi.hess(q);
  const double u = m.U(q);
  const Vector2d u_q = m.U.grad(q);
  const Matrix2d u_qq = m.U.hess(q);
  const Vector2d th = m.primitive_at(q);
  const Matrix2d a = m.primitive_jacobian(q);

  const double kin = c * v2 / (2.0 * t_period);
  s.f = kin - t_period * u + t_period * k + th.dot(v);
  s.e = kin / t_period + u;
  s.f_q = (2.0 * kin) * phi_q - t_period * u_q + a.transpose() * v;
  s.f_v = (c / t_period) * v + th;
  s.f_vv = (c / t_period) * Matrix2d::Identity();
  s.f_vq = (2.0 * c / t_period) * v * phi_q.transpose() + a;
  s.f_qq = (c * v2 / t_period) * (2.0 * phi_q * phi_q.transpose() + phi_qq) -
           t_period * u_qq + v.x() * m.theta_x.hess(q) + v.y() * m.theta_y.hess(q);
  return s;
}

}  // namespace detail

inline double free_time_action(const ManifoldModel& m, double k, const DiscreteLoop& w,
                               double t_period) {
  check_loop(w);
  if (!(t_period > 0)) throw ConfigError("period must be positive");
  const MatrixX2d v = loop_derivative(w);
  double acc = 0.0;
  for (int i = 0; i < w.N(); ++i) {
    const Vector2d q = w.q.row(i).transpose();
    const double c = m.conformal(q);
    acc += c * v.row(i).squaredNorm() / (2.0 * t_period) - t_period * m.U(q) +
           t_period * k + m.primitive_at(q).dot(v.row(i).transpose());
  }
  return acc / w.N() + holonomy_constant(m, {w.cls, Vector2d::Zero()});
}

/** Mean of E(q, q'/T) = |q'|_g^2 / (2T^2) + U(q) along the loop. */
inline double mean_energy(const ManifoldModel& m, const DiscreteLoop& w, double t_period) {
  const MatrixX2d v = loop_derivative(w);
  double acc = 0.0;
  for (int i = 0; i < w.N(); ++i) {
    const Vector2d q = w.q.row(i).transpose();
    acc += m.conformal(q) * v.row(i).squaredNorm() / (2.0 * t_period * t_period) + m.U(q);
  }
  return acc / w.N();
}

/** Raw partial derivatives of the discretized action (1/N weights included). */
struct ActionDifferential {
  MatrixX2d dq;
  double dT = 0.0;
};

inline ActionDifferential free_time_differential(const ManifoldModel& m, double k,
                                                 const DiscreteLoop& w, double t_period) {
  check_loop(w);
  const int n = w.N();
  const MatrixX2d v = loop_derivative(w);
  MatrixX2d f_q(n, 2), f_v(n, 2);
  double mean_e = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto s = detail::sample_terms(m, k, w.q.row(i).transpose(),
                                        v.row(i).transpose(), t_period);
    f_q.row(i) = s.f_q.transpose();
    f_v.row(i) = s.f_v.transpose();
    mean_e += s.e;
  }
  ActionDifferential d;
  d.dq = (f_q - spectral::diff_matrix(n) * f_v) / n;
  d.dT = k - mean_e / n;
  return d;
}

/** L^2 size of the Euler-Lagrange defect: the convergence measure. */
inline double el_residual(const ManifoldModel& m, double k, const DiscreteLoop& w,
                          double t_period) {
  const ActionDifferential d = free_time_differential(m, k, w, t_period);
  const int n = w.N();
  return std::sqrt(double(n) * d.dq.squaredNorm() + d.dT * d.dT);
}

/**
 * W^{1,2} gradient: solves <<grad, .>> = dS. The loop part satisfies
 * (1/N)(G + cov^T G cov) grad = dq; the period slot is the plain derivative.
 */
inline TangentField w_gradient(const ManifoldModel& m, double k, const DiscreteLoop& w,
                               double t_period) {
  const ActionDifferential d = free_time_differential(m, k, w, t_period);
  const int n = w.N();
  TangentField g;
  g.b = d.dT;
  if (m.flat_metric()) {
    g.v = double(n) * (spectral::w12_inverse(n) * d.dq);
    return g;
  }
  const MatrixXd& dm = spectral::diff_matrix(n);
  const MatrixX2d v = loop_derivative(w);
  MatrixXd nabla = MatrixXd::Zero(2 * n, 2 * n);
  VectorXd gdiag(2 * n);
  for (int i = 0; i < n; ++i) {
    const Vector2d q = w.q.row(i).transpose();
    const auto gamma = m.christoffel(q);
    for (int a = 0; a < 2; ++a) {
      gdiag(2 * i + a) = m.conformal(q);
      for (int c = 0; c < 2; ++c)
        nabla(2 * i + a, 2 * i + c) += (gamma[a] * v.row(i).transpose())(c);
      for (int j = 0; j < n; ++j) nabla(2 * i + a, 2 * j + a) += dm(i, j);
    }
  }
  MatrixXd wmat = gdiag.asDiagonal();
  wmat += nabla.transpose() * gdiag.asDiagonal() * nabla;
  wmat /= n;
  VectorXd rhs(2 * n);
  for (int i = 0; i < n; ++i) {
    rhs(2 * i) = d.dq(i, 0);
    rhs(2 * i + 1) = d.dq(i, 1);
  }
  const VectorXd sol = wmat.ldlt().solve(rhs);
  g.v.resize(n, 2);
  for (int i = 0; i < n; ++i) g.v.row(i) << sol(2 * i), sol(2 * i + 1);
  return g;
}

/**
 * Exact Hessian of the discretized action in the raw coordinates
 * (q_00, q_01, q_10, ..., T); symmetric, size (2N+1)^2, 1/N weights included.
 */
inline MatrixXd free_time_hessian(const ManifoldModel& m, double k, const DiscreteLoop& w,
                                  double t_period) {
  check_loop(w);
  const int n = w.N();
  const MatrixXd& dm = spectral::diff_matrix(n);
  const MatrixX2d v = loop_derivative(w);

  std::vector<detail::SampleTerms> terms(n);
  for (int i = 0; i < n; ++i)
    terms[i] = detail::sample_terms(m, k, w.q.row(i).transpose(), v.row(i).transpose(),
                                    t_period);

  MatrixXd h = MatrixXd::Zero(2 * n + 1, 2 * n + 1);
  // H_qq = (diag(f_qq) + diag(f_qv) Dt + Dt^T diag(f_vq) + Dt^T diag(f_vv) Dt)/N
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l) {
      Matrix2d blk = Matrix2d::Zero();
      if (j == l) blk += terms[j].f_qq;
      blk += terms[j].f_vq.transpose() * dm(j, l);  // f_qv(j) D_jl
      blk += dm(l, j) * terms[l].f_vq;              // D^T_jl f_vq(l)
      for (int i = 0; i < n; ++i) blk += dm(i, j) * terms[i].f_vv * dm(i, l);
      h.block<2, 2>(2 * j, 2 * l) = blk / n;
    }
  // H_qT = (f_qT - D f_vT)/N with f_qT, f_vT the T-derivatives of f_q, f_v
  MatrixX2d f_qt(n, 2), f_vt(n, 2);
  double h_tt = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector2d q = w.q.row(i).transpose();
    const double c = m.conformal(q);
    const double v2 = v.row(i).squaredNorm();
    f_qt.row(i) = (-(c * v2 / (t_period * t_period)) * m.phi.grad(q) - m.U.grad(q))
                      .transpose();
    f_vt.row(i) = (-c / (t_period * t_period)) * v.row(i);
    h_tt += c * v2 / (t_period * t_period * t_period);
  }
  const MatrixX2d h_qt = (f_qt - dm * f_vt) / n;
  for (int i = 0; i < n; ++i) {
    h(2 * i, 2 * n) = h_qt(i, 0);
    h(2 * i + 1, 2 * n) = h_qt(i, 1);
    h(2 * n, 2 * i) = h_qt(i, 0);
    h(2 * n, 2 * i + 1) = h_qt(i, 1);
  }
  h(2 * n, 2 * n) = h_tt / n;
  return h;
}

namespace detail {

/**
 * Eigenvalues of the Hessian restricted to the orthogonal complement of the
 * two q-sawtooth directions. The antisymmetric spectral derivative annihilates
 * the sawtooth mode on an even grid, so its discrete eigenvalue collapses to
 * the pointwise f_qq mass term instead of the large positive kinetic value of
 * the continuum Hessian; counting it would corrupt both index and nullity.
 */
inline VectorXd deflated_spectrum(const MatrixXd& h, int n) {
  const int dim = static_cast<int>(h.rows());
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
  return es.eigenvalues();
}

inline int negative_count(const VectorXd& eigs, double tol) {
  int c = 0;
  for (int i = 0; i < eigs.size(); ++i)
    if (eigs(i) < -tol) ++c;
  return c;
}

}  // namespace detail

struct MorseIndices {
  int i = 0;        // negative directions of the full free-period Hessian
  int i_t = 0;      // negative directions with the period frozen
  int nullity = 0;  // 1 at a nondegenerate orbit (the time-shift direction)
};

/**
 * Eigenvalue counts of the discrete Hessian at a critical point, after
 * deflating the two sawtooth artifact directions. An eigenvalue in the
 * ambiguous band (null_tol, 10 null_tol) means the grid cannot separate the
 * kernel from the smallest genuine mode.
 */
inline MorseIndices morse_indices(const ManifoldModel& m, double k, const DiscreteLoop& w,
                                  double t_period, double null_tol_rel = 1e-7) {
  check_loop(w);
  const int n = w.N();
  const MatrixXd h = free_time_hessian(m, k, w, t_period);
  const VectorXd full = detail::deflated_spectrum(h, n);
  const VectorXd frozen = detail::deflated_spectrum(h.topLeftCorner(2 * n, 2 * n), n);

  const double scale = full.cwiseAbs().maxCoeff();
  const double tol = null_tol_rel * scale;
  MorseIndices idx;
  for (int j = 0; j < full.size(); ++j) {
    const double a = std::abs(full(j));
    if (a < tol)
      ++idx.nullity;
    else if (a < 10 * tol)
      throw NonConvergence("nullity ambiguous at the current grid: refine grid");
  }
  idx.i = detail::negative_count(full, tol);
  idx.i_t = detail::negative_count(frozen, tol);
  return idx;
}

struct FindOptions {
  int max_descent = 400;
  int max_newton = 60;
  double tol_descent = 1e-3;
  double tol = 1e-10;
  double t_min = 1e-6;
};

struct CriticalOrbit {
  DiscreteLoop loop;
  double T = 0.0;
  double S = 0.0;
  double residual = 0.0;
  int descent_steps = 0;
  int newton_steps = 0;
  bool converged = false;
};

namespace detail {

inline VectorXd el_defect(const ManifoldModel& m, double k, const DiscreteLoop& w,
                          double t_period) {
  const ActionDifferential d = free_time_differential(m, k, w, t_period);
  const int n = w.N();
  VectorXd r(2 * n + 1);
  for (int i = 0; i < n; ++i) {
    r(2 * i) = n * d.dq(i, 0);
    r(2 * i + 1) = n * d.dq(i, 1);
  }
  r(2 * n) = d.dT;
  return r;
}

}  // namespace detail

/**
 * Two-stage critical point search: W^{1,2} gradient descent with Armijo
 * backtracking down to a loose residual, then damped Newton on the exact
 * discrete Hessian. Rank-deficient Hessians (orbit families) are handled by
 * the minimum-norm least-squares step.
 */
inline CriticalOrbit find_critical(const ManifoldModel& m, double k, DiscreteLoop w,
                                   double t_period, const FindOptions& opt = {}) {
  check_loop(w);
  const int n = w.N();
  CriticalOrbit out;

  double s_val = free_time_action(m, k, w, t_period);
  for (int it = 0; it < opt.max_descent; ++it) {
    if (el_residual(m, k, w, t_period) < opt.tol_descent) break;
    const TangentField g = w_gradient(m, k, w, t_period);
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      DiscreteLoop cand = w;
      cand.q -= step * g.v;
      const double cand_t = t_period - step * g.b;
      if (cand_t > opt.t_min) {
        const double cand_s = free_time_action(m, k, cand, cand_t);
        if (cand_s <= s_val - 1e-4 * step * (g.v.squaredNorm() / n + g.b * g.b)) {
          w = cand;
          t_period = cand_t;
          s_val = cand_s;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    ++out.descent_steps;
    if (!accepted) break;
  }

  double res = el_residual(m, k, w, t_period);
  for (int it = 0; it < opt.max_newton && res >= opt.tol; ++it) {
    const VectorXd r = detail::el_defect(m, k, w, t_period);
    MatrixXd j = free_time_hessian(m, k, w, t_period);
    j.topRows(2 * n) *= double(n);  // match the N-scaled defect rows
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(j);
    cod.setThreshold(1e-12);
    const VectorXd delta = cod.solve(-r);
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      DiscreteLoop cand = w;
      for (int i = 0; i < n; ++i) {
        cand.q(i, 0) += step * delta(2 * i);
        cand.q(i, 1) += step * delta(2 * i + 1);
      }
      const double cand_t = t_period + step * delta(2 * n);
      if (cand_t > opt.t_min) {
        const double cand_res = el_residual(m, k, cand, cand_t);
        if (cand_res < res * (1.0 - 1e-4 * step) || cand_res < opt.tol) {
          w = cand;
          t_period = cand_t;
          res = cand_res;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    ++out.newton_steps;
    if (!accepted) break;
  }

  out.loop = w;
  out.T = t_period;
  out.S = free_time_action(m, k, w, t_period);
  out.residual = res;
  out.converged = res < opt.tol;
  return out;
}

/** Span of the periodic part; collapse indicator for contractible loops. */
inline double loop_extent(const DiscreteLoop& w) {
  const MatrixX2d p = periodic_part(w);
  return (p.colwise().maxCoeff() - p.colwise().minCoeff()).norm();
}

/**
 * Superlinearity constants for the descent monitors. With
 * Theta = sup |theta_ex|_{g*} the Lagrangian obeys
 *   e1 |v|^2 - e2 <= L <= f1 |v|^2 + f2,  E >= g1 |v|^2 - g2
 * for e1 = 1/4, f1 = 3/4, g1 = 1/2 (conformal |v|^2 absorbed into g-norm),
 * e2 = f2 = Theta^2 + sup|U|, g2 = sup|U|. Only meaningful when B = 0.
 */
struct MonitorConstants {
  bool active = false;
  double theta_sup = 0.0;
  double h0 = 0.0;                // S > h0 T + |I|  forces  dS/dT < 0
  std::optional<double> h1;       // T < h1 Sbar half-plane of the trap set
};

inline MonitorConstants monitor_constants(const ManifoldModel& m, double k) {
  MonitorConstants c;
  if (!m.bounded_primitive_exists()) return c;
  c.active = true;
  c.theta_sup = primitive_sup_norm(m);
  const double u_sup = std::max(std::abs(u_max(m)), std::abs(u_min(m)));
  const double f1 = 0.75, f2 = c.theta_sup * c.theta_sup + u_sup;
  const double g1 = 0.5, g2 = u_sup;
  c.h0 = f2 + (f1 / g1) * (g2 + k) + k;
  const double umax = u_max(m), umin = u_min(m);
  if (k > umax) {
    const double m2 = 2.0 * (k - umax);
    const double big = std::sqrt(2.0 * (k - umin));
    if (m2 - c.theta_sup * big > 0) c.h1 = 1.0 / (m2 - c.theta_sup * big);
  }
  return c;
}

struct DescentStep {
  double S, T, dTS, residual;
};

struct DescentReport {
  std::vector<DescentStep> path;
  MonitorConstants constants;
  double holonomy = 0.0;
  int bound_checks = 0, bound_violations = 0;  // S > h0 T + |I| => dTS < 0
  int trap_checks = 0, trap_violations = 0;    // A(Sbar) forward invariance
  bool collapsed = false;
  std::string collapse_kind;
  bool reached_tol = false;
  DiscreteLoop loop;
  double T = 0.0;
};

/**
 * Gradient descent of the free-period action with the structural monitors:
 * period-derivative sign in the superlinear regime, collapse detection, and
 * forward invariance of the trap sets A(Sbar) = {S < Sbar, T < h1 Sbar}.
 */
inline DescentReport descend_flow(const ManifoldModel& m, double k, DiscreteLoop w,
                                  double t_period, int max_steps = 600,
                                  double tol = 1e-3, double t_min = 1e-5) {
  check_loop(w);
  DescentReport rep;
  rep.constants = monitor_constants(m, k);
  rep.holonomy = holonomy_constant(m, {w.cls, Vector2d::Zero()});

  double s_val = free_time_action(m, k, w, t_period);
  auto record = [&] {
    const ActionDifferential d = free_time_differential(m, k, w, t_period);
    rep.path.push_back({s_val, t_period, d.dT,
                        std::sqrt(double(w.N()) * d.dq.squaredNorm() + d.dT * d.dT)});
    if (rep.constants.active && s_val > rep.constants.h0 * t_period + std::abs(rep.holonomy)) {
      ++rep.bound_checks;
      if (!(d.dT < 0)) ++rep.bound_violations;
    }
  };
  record();

  for (int it = 0; it < max_steps; ++it) {
    if (rep.path.back().residual < tol) {
      rep.reached_tol = true;
      break;
    }
    const TangentField g = w_gradient(m, k, w, t_period);
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      DiscreteLoop cand = w;
      cand.q -= step * g.v;
      const double cand_t = t_period - step * g.b;
      if (cand_t > t_min) {
        const double cand_s = free_time_action(m, k, cand, cand_t);
        if (cand_s <= s_val - 1e-4 * step * (g.v.squaredNorm() / w.N() + g.b * g.b)) {
          w = cand;
          t_period = cand_t;
          s_val = cand_s;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    record();
    if (t_period < 10 * t_min) {
      rep.collapsed = true;
      rep.collapse_kind = "period";
      break;
    }
    if (w.cls.trivial() && loop_extent(w) < 1e-6 && std::abs(s_val) < 1e-4) {
      rep.collapsed = true;
      rep.collapse_kind = "point";
      break;
    }
  }

  // trap sets: once (S,T) enters A(Sbar) it must stay there
  if (rep.constants.active && rep.constants.h1 && rep.path.size() > 1) {
    const double h1 = *rep.constants.h1;
    double s_max = -1e300;
    for (const auto& p : rep.path) s_max = std::max(s_max, std::abs(p.S));
    for (int j = 1; j <= 10; ++j) {
      const double sbar = s_max * j / 10.0;
      bool entered = false;
      ++rep.trap_checks;
      for (const auto& p : rep.path) {
        const bool inside = p.S < sbar && p.T < h1 * sbar;
        if (entered && !inside) {
          ++rep.trap_violations;
          break;
        }
        entered = entered || inside;
      }
    }
  }

  rep.loop = w;
  rep.T = t_period;
  return rep;
}

}  // namespace magflow

#endif
