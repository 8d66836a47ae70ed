#ifndef MAGFLOW_RABINOWITZ_HPP
#define MAGFLOW_RABINOWITZ_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "magflow/free_time.hpp"
#include "magflow/loop.hpp"

namespace magflow {

using Eigen::Matrix4d;
using Eigen::Vector4d;

/**
 * Rabinowitz side: loops x = (q, p) in T*T^2 together with a Lagrange
 * multiplier eta for the mean level constraint,
 *
 *   A_k(x, eta) = int x^*(p dq + theta) - eta int (H(x) - k) dt + I(alpha, theta),
 *
 * with H(q,p) = e^{-2 phi}|p|^2/2 + U(q). Critical points are eta-periodic
 * Hamiltonian orbits on H = k, or constants on the level when eta = 0.
 */
struct RabinowitzPoint {
  DiscreteLoop q;
  MatrixX2d p;
  double eta = 0.0;
};

inline void check_point(const RabinowitzPoint& x) {
  check_loop(x.q);
  if (x.p.rows() != x.q.q.rows())
    throw ConfigError("momentum samples must match the loop grid");
}

inline double hamiltonian(const ManifoldModel& m, const Vector2d& q, const Vector2d& p) {
  return p.squaredNorm() / (2.0 * m.conformal(q)) + m.U(q);
}

inline Vector2d hamiltonian_dq(const ManifoldModel& m, const Vector2d& q,
                               const Vector2d& p) {
  return -(p.squaredNorm() / m.conformal(q)) * m.phi.grad(q) + m.U.grad(q);
}

inline Vector2d hamiltonian_dp(const ManifoldModel& m, const Vector2d& q,
                               const Vector2d& p) {
  return p / m.conformal(q);
}

/** Twisted Hamiltonian vector field in (q, p) blocks: i_X omega = -dH. */
inline Vector4d hamiltonian_field(const ManifoldModel& m, const Vector4d& x) {
  const Vector2d q = x.head<2>(), p = x.tail<2>();
  const Vector2d xq = hamiltonian_dp(m, q, p);
  const Vector2d j2xq(-xq.y(), xq.x());
  const Vector2d xp = -hamiltonian_dq(m, q, p) - m.sigma_density(q) * j2xq;
  Vector4d f;
  f << xq, xp;
  return f;
}

namespace detail {

/** Samples of theta(q~) along the lift, plus the linear slope of its y part. */
inline MatrixX2d primitive_samples(const ManifoldModel& m, const DiscreteLoop& w) {
  const int n = w.N();
  MatrixX2d th(n, 2);
  for (int i = 0; i < n; ++i)
    th.row(i) = m.primitive_at(w.q.row(i).transpose()).transpose();
  return th;
}

/** Spectral d/dt of theta(q~(t)); the B x~ part makes the y column affine. */
inline MatrixX2d primitive_time_derivative(const ManifoldModel& m,
                                           const DiscreteLoop& w) {
  const int n = w.N();
  MatrixX2d th = primitive_samples(m, w);
  const double slope = m.B * w.cls.m1;  // theta_y picks up B m1 per period
  for (int i = 0; i < n; ++i) th(i, 1) -= slope * double(i) / n;
  MatrixX2d d = spectral::diff_matrix(n) * th;
  d.col(1).array() += slope;
  return d;
}

}  // namespace detail

inline double rabinowitz_action(const ManifoldModel& m, double k,
                                const RabinowitzPoint& x) {
  check_point(x);
  const int n = x.q.N();
  const MatrixX2d v = loop_derivative(x.q);
  double acc = 0.0, h_mean = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector2d q = x.q.q.row(i).transpose();
    const Vector2d p = x.p.row(i).transpose();
    acc += (p + m.primitive_at(q)).dot(v.row(i).transpose());
    h_mean += hamiltonian(m, q, p) - k;
  }
  return acc / n - x.eta * h_mean / n +
         holonomy_constant(m, {x.q.cls, Vector2d::Zero()});
}

/** Raw partial derivatives of the discretized action (1/N weights included). */
struct RabinowitzDifferential {
  MatrixX2d dq, dp;
  double deta = 0.0;
};

inline RabinowitzDifferential rabinowitz_differential(const ManifoldModel& m, double k,
                                                      const RabinowitzPoint& x) {
  check_point(x);
  const int n = x.q.N();
  const MatrixX2d v = loop_derivative(x.q);
  RabinowitzDifferential d;
  d.dq.resize(n, 2);
  d.dp.resize(n, 2);
  double h_mean = 0.0;

  // d/dt of the covector p + theta(q~)
  const MatrixX2d dpth = spectral::diff_matrix(n) * x.p +
                         detail::primitive_time_derivative(m, x.q);

  for (int i = 0; i < n; ++i) {
    const Vector2d q = x.q.q.row(i).transpose();
    const Vector2d p = x.p.row(i).transpose();
    const Matrix2d a = m.primitive_jacobian(q);
    d.dq.row(i) = (a.transpose() * v.row(i).transpose() -
                   x.eta * hamiltonian_dq(m, q, p) - dpth.row(i).transpose())
                      .transpose() /
                  n;
    d.dp.row(i) =
        (v.row(i).transpose() - x.eta * hamiltonian_dp(m, q, p)).transpose() / n;
    h_mean += hamiltonian(m, q, p) - k;
  }
  d.deta = -h_mean / n;
  return d;
}

/** Pointwise L^2 defect size: the convergence measure on the Rabinowitz side. */
inline double rabinowitz_residual(const ManifoldModel& m, double k,
                                  const RabinowitzPoint& x) {
  const RabinowitzDifferential d = rabinowitz_differential(m, k, x);
  const int n = x.q.N();
  return std::sqrt(double(n) * (d.dq.squaredNorm() + d.dp.squaredNorm()) +
                   d.deta * d.deta);
}

enum class GradMetric {
  sasaki,      // block diagonal (G, G^{-1}); omega-compatible only when b = 0
  compatible,  // polar-normalized J with M = J^T Omega, SPD for any b
};

/** Pointwise compatible pair (J, M) at q: J^2 = -I, M = J^T Omega SPD. */
struct CompatibleFrame {
  Matrix4d j, metric;
};

inline Matrix4d twisted_omega(const ManifoldModel& m, const Vector2d& q) {
  Matrix4d w = Matrix4d::Zero();
  const double b = m.sigma_density(q);
  w(0, 1) = b;
  w(1, 0) = -b;
  w.block<2, 2>(0, 2) = -Matrix2d::Identity();
  w.block<2, 2>(2, 0) = Matrix2d::Identity();
  return w;
}

inline CompatibleFrame compatible_frame(const ManifoldModel& m, const Vector2d& q) {
  const double ephi = std::exp(m.phi(q));
  Vector4d gr_half;
  gr_half << ephi, ephi, 1.0 / ephi, 1.0 / ephi;
  const Matrix4d omega = twisted_omega(m, q);
  const Matrix4d omega_t =
      gr_half.cwiseInverse().asDiagonal() * omega * gr_half.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix4d> es(-omega_t * omega_t);
  const Matrix4d p_inv_sqrt = es.operatorInverseSqrt();
  const Matrix4d u = omega_t * p_inv_sqrt;
  CompatibleFrame f;
  f.j = gr_half.cwiseInverse().asDiagonal() * u * gr_half.asDiagonal();
  f.metric = f.j.transpose() * omega;
  return f;
}

/** L^2 tangent data at a Rabinowitz point. */
struct RabinowitzTangent {
  MatrixX2d vq, vp;
  double veta = 0.0;
};

/** Metric pairing <xi, rho>_M = (1/N) sum xi_i^T M(q_i) rho_i + veta pairing. */
inline double l2_inner(const ManifoldModel& m, const RabinowitzPoint& x,
                       const RabinowitzTangent& a, const RabinowitzTangent& b,
                       GradMetric metric) {
  const int n = x.q.N();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector2d q = x.q.q.row(i).transpose();
    Vector4d va, vb;
    va << a.vq.row(i).transpose(), a.vp.row(i).transpose();
    vb << b.vq.row(i).transpose(), b.vp.row(i).transpose();
    if (metric == GradMetric::sasaki) {
      const double c = m.conformal(q);
      acc += c * va.head<2>().dot(vb.head<2>()) + va.tail<2>().dot(vb.tail<2>()) / c;
    } else {
      acc += va.dot(compatible_frame(m, q).metric * vb);
    }
  }
  return acc / n + a.veta * b.veta;
}

/** L^2 gradient: pointwise M(q_i)^{-1} applied to the N-scaled differential. */
inline RabinowitzTangent rabinowitz_gradient(const ManifoldModel& m, double k,
                                             const RabinowitzPoint& x,
                                             GradMetric metric) {
  const RabinowitzDifferential d = rabinowitz_differential(m, k, x);
  const int n = x.q.N();
  RabinowitzTangent g;
  g.vq.resize(n, 2);
  g.vp.resize(n, 2);
  g.veta = d.deta;
  for (int i = 0; i < n; ++i) {
    const Vector2d q = x.q.q.row(i).transpose();
    if (metric == GradMetric::sasaki) {
      const double c = m.conformal(q);
      g.vq.row(i) = double(n) / c * d.dq.row(i);
      g.vp.row(i) = double(n) * c * d.dp.row(i);
    } else {
      Vector4d rhs;
      rhs << d.dq.row(i).transpose(), d.dp.row(i).transpose();
      const Vector4d sol =
          compatible_frame(m, q).metric.ldlt().solve(double(n) * rhs);
      g.vq.row(i) = sol.head<2>().transpose();
      g.vp.row(i) = sol.tail<2>().transpose();
    }
  }
  return g;
}

inline double gradient_norm(const ManifoldModel& m, const RabinowitzPoint& x,
                            const RabinowitzTangent& g, GradMetric metric) {
  return std::sqrt(l2_inner(m, x, g, g, metric));
}

inline double sup_momentum(const RabinowitzPoint& x) {
  return x.p.rowwise().norm().maxCoeff();
}

/**
 * Lift of a free-period critical orbit (gamma, T): p = G(q) q'/T, eta = +-T.
 * The positive lift reproduces the free-period action exactly at the discrete
 * level; the negative lift is the time-reversed point with A = -S whenever
 * B m1 m2 = 0 (otherwise the fixed cover primitive leaves a lift defect).
 */
inline RabinowitzPoint z_lift(const ManifoldModel& m, const DiscreteLoop& w,
                              double t_period, int sign) {
  check_loop(w);
  const int n = w.N();
  RabinowitzPoint x;
  if (sign >= 0) {
    x.q = w;
    x.eta = t_period;
    const MatrixX2d v = loop_derivative(w);
    x.p.resize(n, 2);
    for (int i = 0; i < n; ++i)
      x.p.row(i) = m.conformal(w.q.row(i).transpose()) / t_period * v.row(i);
  } else {
    const RabinowitzPoint plus = z_lift(m, w, t_period, +1);
    x.q = reverse_loop(w);
    x.eta = -t_period;
    x.p.resize(n, 2);
    for (int i = 0; i < n; ++i) x.p.row(i) = plus.p.row((n - i) % n);
  }
  return x;
}

/** Time-reversed point: (q(-t), p(-t), -eta). */
inline RabinowitzPoint reverse_point(const RabinowitzPoint& x) {
  const int n = x.q.N();
  RabinowitzPoint r;
  r.q = reverse_loop(x.q);
  r.eta = -x.eta;
  r.p.resize(n, 2);
  for (int i = 0; i < n; ++i) r.p.row(i) = x.p.row((n - i) % n);
  return r;
}

/**
 * Free-period action vs Rabinowitz action of lifted points. For eta = T > 0,
 *   S - A(q, p, T) = int (T/2) |q'/T - p^sharp|_g^2 dt >= 0,
 * and the time-reversed comparison produces the identical slack.
 */
struct ActionComparison {
  double S = 0.0;
  double a_plus = 0.0, a_minus = 0.0;
  double slack_plus = 0.0, slack_minus = 0.0;
};

inline ActionComparison compare_actions(const ManifoldModel& m, double k,
                                        const DiscreteLoop& w, double t_period,
                                        const MatrixX2d* p = nullptr) {
  RabinowitzPoint x = z_lift(m, w, t_period, +1);
  if (p) x.p = *p;
  const RabinowitzPoint xr = reverse_point(x);
  ActionComparison c;
  c.S = free_time_action(m, k, w, t_period);
  c.a_plus = rabinowitz_action(m, k, x);
  c.a_minus = rabinowitz_action(m, k, xr);
  c.slack_plus = c.S - c.a_plus;
  c.slack_minus = c.a_minus + c.S;
  return c;
}

/**
 * Constant loop on the level: x0 = (q0, p0) with H(x0) = k, eta = 0; the
 * direction of p0 is immaterial for the spectral counts below.
 */
inline RabinowitzPoint constant_point(const ManifoldModel& m, double k,
                                      const Vector2d& q0, int n,
                                      const Vector2d& p_dir = Vector2d(1, 0)) {
  const double gap = k - m.U(q0);
  if (gap <= 0)
    throw ConfigError("level k is below the potential at the base point");
  RabinowitzPoint x;
  x.q = straight_loop({0, 0}, n, q0);
  const double pnorm = std::sqrt(2.0 * gap * m.conformal(q0));
  x.p = (pnorm * p_dir.normalized()).transpose().replicate(n, 1);
  x.eta = 0.0;
  return x;
}

namespace detail {

inline VectorXd pack_point(const RabinowitzPoint& x) {
  const int n = x.q.N();
  VectorXd z(4 * n + 1);
  for (int i = 0; i < n; ++i) {
    z(2 * i) = x.q.q(i, 0);
    z(2 * i + 1) = x.q.q(i, 1);
    z(2 * n + 2 * i) = x.p(i, 0);
    z(2 * n + 2 * i + 1) = x.p(i, 1);
  }
  z(4 * n) = x.eta;
  return z;
}

inline RabinowitzPoint unpack_point(const VectorXd& z, HomotopyClass cls) {
  const int n = (static_cast<int>(z.size()) - 1) / 4;
  RabinowitzPoint x;
  x.q.cls = cls;
  x.q.q.resize(n, 2);
  x.p.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    x.q.q(i, 0) = z(2 * i);
    x.q.q(i, 1) = z(2 * i + 1);
    x.p(i, 0) = z(2 * n + 2 * i);
    x.p(i, 1) = z(2 * n + 2 * i + 1);
  }
  x.eta = z(4 * n);
  return x;
}

inline VectorXd pack_differential(const RabinowitzDifferential& d) {
  const int n = static_cast<int>(d.dq.rows());
  VectorXd r(4 * n + 1);
  for (int i = 0; i < n; ++i) {
    r(2 * i) = d.dq(i, 0);
    r(2 * i + 1) = d.dq(i, 1);
    r(2 * n + 2 * i) = d.dp(i, 0);
    r(2 * n + 2 * i + 1) = d.dp(i, 1);
  }
  r(4 * n) = d.deta;
  return r;
}

}  // namespace detail

/**
 * Spectrum of the action Hessian at a constant point on the level, by central
 * differences of the analytic differential. The kernel is T_{x0} Sigma_k:
 * exactly three near-zero eigenvalues, separated from the rest.
 */
struct KernelReport {
  VectorXd eigenvalues;  // sorted by magnitude, ascending
  int near_zero = 0;
  double gap = 0.0;      // |lambda_4| / |lambda_3|
};

inline KernelReport constant_hessian_kernel(const ManifoldModel& m, double k,
                                            const Vector2d& q0, int n = 16,
                                            const Vector2d& p_dir = Vector2d(1, 0)) {
  const RabinowitzPoint x0 = constant_point(m, k, q0, n, p_dir);
  const VectorXd z0 = detail::pack_point(x0);
  const int dim = static_cast<int>(z0.size());
  const double h = 1e-5 * std::max(1.0, z0.lpNorm<Eigen::Infinity>());

  MatrixXd hess(dim, dim);
  for (int j = 0; j < dim; ++j) {
    VectorXd zp = z0, zm = z0;
    zp(j) += h;
    zm(j) -= h;
    const VectorXd rp = detail::pack_differential(
        rabinowitz_differential(m, k, detail::unpack_point(zp, x0.q.cls)));
    const VectorXd rm = detail::pack_differential(
        rabinowitz_differential(m, k, detail::unpack_point(zm, x0.q.cls)));
    hess.col(j) = (rp - rm) / (2.0 * h);
  }
  hess = ((hess + hess.transpose()) / 2.0).eval();

  // The antisymmetric spectral derivative annihilates the sawtooth mode on an
  // even grid, so at eta = 0 the four directions dq = (-1)^i e_a,
  // dp = (-1)^i e_a are exact zero modes of the discrete Hessian with no
  // continuum counterpart. Deflate them before reading off the kernel.
  MatrixXd sawtooth = MatrixXd::Zero(dim, 4);
  for (int i = 0; i < n; ++i) {
    const double s = (i % 2 == 0) ? 1.0 : -1.0;
    sawtooth(2 * i, 0) = s;
    sawtooth(2 * i + 1, 1) = s;
    sawtooth(2 * n + 2 * i, 2) = s;
    sawtooth(2 * n + 2 * i + 1, 3) = s;
  }
  Eigen::HouseholderQR<MatrixXd> qr(sawtooth);
  const MatrixXd complement =
      qr.householderQ() * MatrixXd::Identity(dim, dim).rightCols(dim - 4);
  const MatrixXd reduced = complement.transpose() * hess * complement;

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(reduced);
  VectorXd abs_eigs = es.eigenvalues().cwiseAbs();
  std::sort(abs_eigs.data(), abs_eigs.data() + abs_eigs.size());
  KernelReport rep;
  rep.eigenvalues = abs_eigs;
  rep.gap = abs_eigs(3) / std::max(abs_eigs(2), 1e-300);
  const double cut = std::sqrt(std::max(abs_eigs(2), 1e-300) * abs_eigs(3));
  rep.near_zero = static_cast<int>(
      std::count_if(abs_eigs.data(), abs_eigs.data() + abs_eigs.size(),
                    [cut](double v) { return v < cut; }));
  return rep;
}

/**
 * Constants controlling |eta| along flow lines. With the Liouville form
 * lambda = p dq + theta, lambda(X_H) = e^{-2 phi}|p|^2 + theta . p^sharp is
 * bounded below by 2 delta on the band |H - k| <= delta_hat, and
 * D = sup_band |p + theta|_{g*}. Requires a bounded primitive (B = 0).
 */
struct EtaBounds {
  double delta_hat = 0.0;
  double delta = 0.0;
  double d_sup = 0.0;
  double rho0 = 0.0;
  bool rho0_empirical = false;
  double rho1 = 0.0;
  double c0 = 0.0;
};

namespace detail {

/** inf over the band of lambda(X_H); worst case over p directions in closed form. */
inline double band_lambda_inf(const ManifoldModel& m, double k, double delta_hat) {
  const int n = 256;
  double inf = 1e300;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vector2d q(double(i) / n, double(j) / n);
      const double theta_norm = m.covector_norm(q, {m.theta_x(q), m.theta_y(q)});
      const double lo = 2.0 * (k - delta_hat - m.U(q));
      const double hi_kin = 2.0 * (k + delta_hat - m.U(q));
      if (hi_kin < 0) continue;  // band does not reach this fiber
      const double val = lo - theta_norm * std::sqrt(std::max(hi_kin, 0.0));
      inf = std::min(inf, val);
    }
  return inf;
}

inline double band_covector_sup(const ManifoldModel& m, double k, double delta_hat) {
  const int n = 256;
  double sup = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vector2d q(double(i) / n, double(j) / n);
      const double theta_norm = m.covector_norm(q, {m.theta_x(q), m.theta_y(q)});
      const double kin = 2.0 * (k + delta_hat - m.U(q));
      if (kin < 0) continue;
      sup = std::max(sup, std::sqrt(kin) + theta_norm);
    }
  return sup;
}

}  // namespace detail

/** rho0 from flow samples: largest gradient size that certifies band membership. */
inline std::pair<double, bool> estimate_rho0(
    const std::vector<std::pair<double, bool>>& grad_in_band_samples) {
  double rho0 = 0.1;
  bool empirical = true;
  for (const auto& [grad, in_band] : grad_in_band_samples)
    if (!in_band) rho0 = std::min(rho0, 0.99 * grad);
  return {rho0, empirical};
}

inline EtaBounds eta_bound_constants(const ManifoldModel& m, double k, double rho0,
                                     double action_lo, double action_hi,
                                     double holonomy, bool rho0_empirical = true) {
  if (!m.bounded_primitive_exists())
    throw ConfigError("eta bounds need a bounded primitive (B = 0)");
  if (!(k > u_max(m)))
    throw ConfigError("eta bounds need k above the Mane-free threshold max U");
  if (!(rho0 > 0)) throw ConfigError("rho0 must be positive");

  EtaBounds b;
  b.rho0 = rho0;
  b.rho0_empirical = rho0_empirical;
  b.delta_hat = 0.1 * k;
  for (int it = 0; it < 50; ++it) {
    b.delta = 0.5 * detail::band_lambda_inf(m, k, b.delta_hat);
    if (b.delta >= b.delta_hat) break;
    if (b.delta <= 0)
      throw ConfigError("lambda(X_H) is not positive near the level; k too small");
    b.delta_hat = b.delta;
  }
  if (b.delta < b.delta_hat)
    throw NonConvergence("band shrink iteration did not stabilize");
  b.d_sup = detail::band_covector_sup(m, k, b.delta_hat);
  b.rho1 = std::max(1.0, b.d_sup * rho0 + std::abs(holonomy)) / b.delta;
  b.c0 = b.rho1 * (std::max(std::abs(action_lo), std::abs(action_hi)) + 1.0) +
         (action_hi - action_lo) / rho0;
  return b;
}

}  // namespace magflow

#endif
