#ifndef MAGFLOW_INDICES_HPP
#define MAGFLOW_INDICES_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "magflow/free_time.hpp"

namespace magflow {

using Eigen::Matrix4d;
using Eigen::Vector4d;

/**
 * Index data along a closed orbit. The fiber shift (q, p) -> (q, P = p +
 * theta(q)) is a global Darboux trivialization: it turns the twisted form
 * into dP ^ dq at the price of moving theta into the Hamiltonian,
 *   Ht(q, P) = e^{-2 phi} |P - theta(q)|^2 / 2 + U(q),
 * so the linearized flow lives in a fixed Sp(4) and the usual crossing
 * machinery applies verbatim.
 */

inline Matrix4d standard_omega() {
  Matrix4d o = Matrix4d::Zero();
  o.block<2, 2>(0, 2) = -Matrix2d::Identity();
  o.block<2, 2>(2, 0) = Matrix2d::Identity();
  return o;
}

/** Shifted fiber coordinate P = p + theta at a cover point. */
inline Vector2d shifted_momentum(const ManifoldModel& m, const Vector2d& q_cover,
                                 const Vector2d& p) {
  return p + m.primitive_at(q_cover);
}

inline double shifted_hamiltonian(const ManifoldModel& m, const Vector2d& q_cover,
                                  const Vector2d& P) {
  const Vector2d w = P - m.primitive_at(q_cover);
  return 0.5 * w.squaredNorm() / m.conformal(q_cover) + m.U(q_cover);
}

/**
 * Hessian of Ht in (q, P) blocks, written in the unshifted fiber variable
 * w = P - theta = p. Rows and columns are ordered (q1, q2, P1, P2).
 */
inline Matrix4d shifted_hessian(const ManifoldModel& m, const Vector2d& q_cover,
                                const Vector2d& p) {
  const double e = 1.0 / m.conformal(q_cover);
  const Vector2d phi_q = m.phi.grad(q_cover);
  const Matrix2d phi_h = m.phi.hess(q_cover);
  const Matrix2d a = m.primitive_jacobian(q_cover);
  const Matrix2d htx = m.theta_x.hess(q_cover);
  const Matrix2d hty = m.theta_y.hess(q_cover);
  const Vector2d at_p = a.transpose() * p;

  const Matrix2d s_pp = e * Matrix2d::Identity();
  const Matrix2d s_pq = -2.0 * e * p * phi_q.transpose() - e * a;
  const Matrix2d s_qq =
      2.0 * e * p.squaredNorm() * phi_q * phi_q.transpose() -
      e * p.squaredNorm() * phi_h +
      2.0 * e * (at_p * phi_q.transpose() + phi_q * at_p.transpose()) -
      e * (p(0) * htx + p(1) * hty) + e * a.transpose() * a + m.U.hess(q_cover);

  Matrix4d s;
  s.block<2, 2>(0, 0) = s_qq;
  s.block<2, 2>(0, 2) = s_pq.transpose();
  s.block<2, 2>(2, 0) = s_pq;
  s.block<2, 2>(2, 2) = s_pp;
  return s;
}

/** Shifted-frame Hamiltonian vector field (Ht_P, -Ht_q) at (q, p). */
inline Vector4d shifted_field(const ManifoldModel& m, const Vector2d& q_cover,
                              const Vector2d& p) {
  const double e = 1.0 / m.conformal(q_cover);
  const Vector2d phi_q = m.phi.grad(q_cover);
  const Matrix2d a = m.primitive_jacobian(q_cover);
  const Vector2d ht_q =
      -e * p.squaredNorm() * phi_q - e * (a.transpose() * p) + m.U.grad(q_cover);
  Vector4d f;
  f << e * p, -ht_q;
  return f;
}

namespace detail {

/** Trigonometric evaluation of an orbit and its linearization coefficient. */
struct OrbitPath {
  const ManifoldModel* m = nullptr;
  MatrixX2d per;   // periodic part samples of the loop
  MatrixX2d vel;   // lift derivative samples (a periodic field)
  Vector2d slope;  // winding class vector
  double T = 0.0;  // period; the positive lift has eta = T

  static OrbitPath make(const ManifoldModel& mm, const DiscreteLoop& w, double t) {
    OrbitPath p;
    p.m = &mm;
    p.per = periodic_part(w);
    p.vel = loop_derivative(w);
    p.slope = w.cls.vec();
    p.T = t;
    return p;
  }

  void state(double t, Vector2d& q_cover, Vector2d& p) const {
    q_cover = field_at(per, t) + t * slope;
    const Vector2d v = field_at(vel, t);
    p = m->conformal(q_cover) * v / T;
  }

  Matrix4d hessian(double t) const {
    Vector2d q, p;
    state(t, q, p);
    return shifted_hessian(*m, q, p);
  }

  /** d Phi / dt = T * (-Omega0 S) Phi in loop time. */
  Matrix4d coefficient(double t) const {
    const Matrix4d s = hessian(t);
    Matrix4d c;
    c.block<2, 4>(0, 0) = s.block<2, 4>(2, 0);
    c.block<2, 4>(2, 0) = -s.block<2, 4>(0, 0);
    return T * c;
  }

  Vector4d generator(double t) const {
    Vector2d q, p;
    state(t, q, p);
    return shifted_field(*m, q, p);
  }
};

/** One RK4 stretch of the variational equation with the analytic coefficient. */
inline Matrix4d advance(const OrbitPath& path, Matrix4d phi, double t0, double t1,
                        int steps) {
  const double h = (t1 - t0) / steps;
  for (int i = 0; i < steps; ++i) {
    const double t = t0 + i * h;
    const Matrix4d c1 = path.coefficient(t);
    const Matrix4d cm = path.coefficient(t + 0.5 * h);
    const Matrix4d c2 = path.coefficient(t + h);
    const Matrix4d k1 = c1 * phi;
    const Matrix4d k2 = cm * (phi + 0.5 * h * k1);
    const Matrix4d k3 = cm * (phi + 0.5 * h * k2);
    const Matrix4d k4 = c2 * (phi + h * k3);
    phi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return phi;
}

}  // namespace detail

struct LinearizedFlow {
  std::vector<Matrix4d> phi;  // at nodes t_j = j / (substeps * N), j = 0..M
  Matrix4d monodromy;
  double symplectic_defect = 0.0;  // max_j |Phi^T Omega0 Phi - Omega0|
};

/** Fundamental solution of the linearized positive-lift dynamics. */
inline LinearizedFlow linearized_flow(const ManifoldModel& m, const DiscreteLoop& w,
                                      double t_period, int substeps = 16) {
  check_loop(w);
  if (!(t_period > 0)) throw ConfigError("orbit period must be positive");
  const detail::OrbitPath path = detail::OrbitPath::make(m, w, t_period);
  const int steps = substeps * w.N();
  const Matrix4d omega = standard_omega();

  LinearizedFlow lf;
  lf.phi.reserve(steps + 1);
  lf.phi.push_back(Matrix4d::Identity());
  const double h = 1.0 / steps;
  for (int j = 0; j < steps; ++j) {
    lf.phi.push_back(detail::advance(path, lf.phi.back(), j * h, (j + 1) * h, 1));
    const Matrix4d& f = lf.phi.back();
    lf.symplectic_defect =
        std::max(lf.symplectic_defect,
                 (f.transpose() * omega * f - omega).lpNorm<Eigen::Infinity>());
  }
  lf.monodromy = lf.phi.back();
  return lf;
}

struct IndexOptions {
  int substeps = 16;
  double ker_tol = 1e-6;   // singular value cut for kernel detection
  double reg_tol = 1e-8;   // crossing-form eigenvalues below this count as zero
  int retry_budget = 3;    // endpoint perturbations when a form is marginal
};

struct IndexReport {
  double mu_cz = 0.0;   // Robbin-Salamon index of the linearized period map
  int nullity = 0;      // dim ker(monodromy - 1); 1 for the generator alone
  int transversal = 0;  // integer part: mu_cz - 1/2
  int chi = 0;          // orientation sign of the shear block
  double mu_plus = 0.0, mu_minus = 0.0;  // graded indices of the two lifts
  int interior_crossings = 0;
  int persistent_kernel = 0;  // constant-rank degeneracy along the path
  double symplectic_defect = 0.0;
};

/** Signs of the eigenvalues, treating |lambda| <= zero_tol as zero. */
inline int partial_signature(const VectorXd& eigs, double zero_tol) {
  int sig = 0;
  for (int i = 0; i < eigs.size(); ++i) {
    if (eigs(i) > zero_tol) ++sig;
    if (eigs(i) < -zero_tol) --sig;
  }
  return sig;
}

namespace detail {

/** Kernel basis of (phi - 1) by singular values below tol * scale. */
inline MatrixXd unit_kernel(const Matrix4d& phi, double tol) {
  const Matrix4d gap = phi - Matrix4d::Identity();
  Eigen::JacobiSVD<Matrix4d> svd(gap, Eigen::ComputeFullV);
  const double scale = 1.0 + phi.lpNorm<Eigen::Infinity>();
  int dim = 0;
  for (int i = 3; i >= 0; --i)
    if (svd.singularValues()(i) < tol * scale) ++dim;
  return svd.matrixV().rightCols(dim);
}

/** Crossing form eta K^T S(t) K; partial signature with a marginal-zone flag. */
inline int crossing_signature(const OrbitPath& path, double t, const MatrixXd& kernel,
                              double reg_tol, bool* marginal) {
  const MatrixXd f =
      path.T * kernel.transpose() * path.hessian(t) * kernel;  // eta = T
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (f + f.transpose()));
  const double scale = std::max(1.0, f.lpNorm<Eigen::Infinity>());
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double a = std::abs(es.eigenvalues()(i));
    if (a > reg_tol * scale && a < 10.0 * reg_tol * scale) *marginal = true;
  }
  return partial_signature(es.eigenvalues(), reg_tol * scale);
}

}  // namespace detail

/**
 * Robbin-Salamon index and orientation data of a closed orbit, from the
 * linearized flow of its positive lift. Crossings at the endpoints weigh 1/2;
 * a constant-rank kernel along the whole path (translation-invariant models)
 * is excluded from interior crossing detection and its vanishing crossing
 * form contributes nothing. Marginal crossing forms retry with the endpoint
 * time backed off by parts in 1e6; orbits that stay marginal do not converge.
 */
inline IndexReport orbit_indices(const ManifoldModel& m, const DiscreteLoop& w,
                                 double t_period, const IndexOptions& opt = {}) {
  const detail::OrbitPath path = detail::OrbitPath::make(m, w, t_period);
  const LinearizedFlow lf = linearized_flow(m, w, t_period, opt.substeps);
  const int steps = static_cast<int>(lf.phi.size()) - 1;
  const double h = 1.0 / steps;

  IndexReport rep;
  rep.symplectic_defect = lf.symplectic_defect;
  rep.nullity = static_cast<int>(detail::unit_kernel(lf.monodromy, opt.ker_tol).cols());

  double drift = 0.0;
  for (const Matrix4d& f : lf.phi)
    drift = std::max(drift, (f - Matrix4d::Identity()).lpNorm<Eigen::Infinity>());
  if (drift < 1e-10) return rep;  // identity path: every index vanishes

  // interior kernel sizes and the persistent (constant-rank) part
  std::vector<std::array<double, 4>> sigma(steps + 1);
  std::vector<int> count(steps + 1, 0);
  for (int j = 0; j <= steps; ++j) {
    Eigen::JacobiSVD<Matrix4d> svd(lf.phi[j] - Matrix4d::Identity());
    const double scale = 1.0 + lf.phi[j].lpNorm<Eigen::Infinity>();
    for (int i = 0; i < 4; ++i) {
      sigma[j][i] = svd.singularValues()(3 - i);  // ascending
      if (sigma[j][i] < opt.ker_tol * scale) ++count[j];
    }
  }
  int dk = 4;
  for (int j = 1; j < steps; ++j) dk = std::min(dk, count[j]);
  rep.persistent_kernel = dk;

  for (int attempt = 0;; ++attempt) {
    const double t_end = 1.0 - attempt * 1e-6;
    bool marginal = false;
    double mu = 0.0;
    int interior = 0;

    // t = 0: the kernel is everything, weight 1/2
    mu += 0.5 * detail::crossing_signature(path, 0.0, MatrixXd::Identity(4, 4),
                                           opt.reg_tol, &marginal);

    // isolated interior crossings above the persistent rank
    for (int j = 1; j < steps;) {
      if (count[j] <= dk || j * h >= t_end) {
        ++j;
        continue;
      }
      int best = j;
      int end = j;
      while (end + 1 < steps && count[end + 1] > dk && (end + 1) * h < t_end) {
        ++end;
        if (sigma[end][dk] < sigma[best][dk]) best = end;
      }
      double t_star = best * h;
      if (best > 0 && best < steps) {  // parabolic refinement of the dip
        const double a = sigma[best - 1][dk], b = sigma[best][dk],
                     c = sigma[best + 1][dk];
        const double denom = a - 2.0 * b + c;
        if (std::abs(denom) > 1e-300)
          t_star += h * std::clamp(0.5 * (a - c) / denom, -1.0, 1.0);
      }
      const Matrix4d phi_star =
          detail::advance(path, lf.phi[best], best * h, t_star, 4);
      const MatrixXd kernel = detail::unit_kernel(phi_star, opt.ker_tol);
      if (kernel.cols() > dk) {
        mu += detail::crossing_signature(path, t_star, kernel, opt.reg_tol, &marginal);
        ++interior;
      }
      j = end + 1;
    }

    // t = t_end: weight 1/2 on the kernel of the (possibly backed-off) endpoint
    const Matrix4d phi_end =
        (attempt == 0)
            ? lf.monodromy
            : detail::advance(path, lf.phi[steps - 1], (steps - 1) * h, t_end, 4);
    const MatrixXd kernel_end = detail::unit_kernel(phi_end, opt.ker_tol);
    if (kernel_end.cols() > 0)
      mu += 0.5 *
            detail::crossing_signature(path, t_end, kernel_end, opt.reg_tol, &marginal);

    if (!marginal) {
      rep.mu_cz = mu;
      rep.interior_crossings = interior;
      break;
    }
    if (attempt == opt.retry_budget)
      throw NonConvergence("crossing forms stayed marginal after endpoint backoff");
  }

  rep.transversal = static_cast<int>(std::llround(rep.mu_cz - 0.5));

  // orientation sign of the degenerate block, from the monodromy alone
  if (rep.nullity != 1)
    throw NonConvergence("orientation sign needs a one dimensional kernel");
  const Matrix4d gap = lf.monodromy - Matrix4d::Identity();
  Eigen::JacobiSVD<Matrix4d> svd2(gap * gap, Eigen::ComputeFullV);
  const double scale2 = 1.0 + (gap * gap).lpNorm<Eigen::Infinity>();
  int w2_dim = 0;
  for (int i = 3; i >= 0; --i)
    if (svd2.singularValues()(i) < opt.ker_tol * scale2) ++w2_dim;
  if (w2_dim != 2)
    throw NonConvergence("generalized kernel of the period map is not a shear plane");
  const MatrixXd w2 = svd2.matrixV().rightCols(2);

  const Vector4d gen = path.generator(0.0);
  const Vector4d u = gen / gen.norm();
  const Matrix4d omega = standard_omega();
  int pick = 0;
  double best_pair = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double pairing = u.dot(omega * w2.col(i));
    if (std::abs(pairing) > std::abs(best_pair)) {
      best_pair = pairing;
      pick = i;
    }
  }
  if (std::abs(best_pair) < 1e-8)
    throw NonConvergence("shear plane degenerates against the generator");
  const Vector4d w_hat = w2.col(pick) / best_pair;
  const Vector4d r = gap * w_hat;
  const double c = u.dot(r);
  if ((r - c * u).norm() > 1e-6 * (1.0 + w_hat.norm()) || std::abs(c) < 1e-10)
    throw NonConvergence("shear coefficient is not resolved");
  rep.chi = (c < 0.0) ? +1 : -1;

  rep.mu_plus = rep.mu_cz - 0.5 * rep.chi;
  rep.mu_minus = -rep.mu_plus;
  return rep;
}

/**
 * Orientation sign by continuation in the level: chi = sign(-dT/dk) along the
 * orbit family through (w, T). Halves the probe until the sign repeats.
 */
inline int chi_by_continuation(const ManifoldModel& m, double k,
                               const DiscreteLoop& w, double t_period,
                               double dk_rel = 1e-3) {
  if (orbit_indices(m, w, t_period).nullity != 1)
    throw NonConvergence("orientation sign needs a one dimensional kernel");
  double dk = dk_rel * std::abs(k);
  int last = 0, stable = 0;
  for (int iter = 0; iter < 8; ++iter, dk *= 0.5) {
    const CriticalOrbit up = find_critical(m, k + dk, w, t_period);
    const CriticalOrbit dn = find_critical(m, k - dk, w, t_period);
    if (!up.converged || !dn.converged)
      throw NonConvergence("continuation in the level did not converge");
    const double slope = (up.T - dn.T) / (2.0 * dk);
    if (std::abs(slope) < 1e-10)
      throw NonConvergence("period is insensitive to the level");
    const int cur = (slope < 0.0) ? +1 : -1;
    if (cur == last && ++stable >= 2) return cur;
    if (cur != last) stable = 1;
    last = cur;
  }
  throw NonConvergence("orientation sign did not stabilize under halving");
}

/** Grading of a constant leaf: -1 over a two dimensional base. */
constexpr double constant_point_index() { return -1.0; }

}  // namespace magflow

#endif
