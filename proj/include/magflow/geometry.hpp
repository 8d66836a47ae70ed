#ifndef MAGFLOW_GEOMETRY_HPP
#define MAGFLOW_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "magflow/fourier.hpp"
#include "magflow/util.hpp"

namespace magflow {

/** Free homotopy class of loops in the 2-torus, identified with Z^2. */
struct HomotopyClass {
  int m1 = 0, m2 = 0;
  bool trivial() const { return m1 == 0 && m2 == 0; }
  HomotopyClass reversed() const { return {-m1, -m2}; }
  bool operator==(const HomotopyClass&) const = default;
  Vector2d vec() const { return {double(m1), double(m2)}; }
};

/**
 * Reference loop of a class: the straight line t -> base + t*(m1,m2) in cover
 * coordinates (constant at base for the trivial class). Reversal convention:
 * the reference of -alpha is t -> q_alpha(-t).
 */
struct ReferenceLoop {
  HomotopyClass cls;
  Vector2d base = Vector2d::Zero();
  Vector2d at(double t) const { return base + t * cls.vec(); }
};

/**
 * Conformally flat torus with a magnetic 2-form and a potential:
 *
 *   g = e^{2 phi(q)} (dx^2 + dy^2),   sigma = B dx^dy + d(theta_ex),
 *   U : T^2 -> R,
 *
 * phi, U and the two components of theta_ex are finite Fourier tables, so all
 * geometric quantities evaluate in closed form. On the universal cover the
 * fixed primitive of sigma is theta(q~) = B x~ dy + theta_ex(q~); it is
 * bounded iff B = 0.
 */
struct ManifoldModel {
  FourierTable2 phi;
  FourierTable2 U;
  double B = 0.0;
  FourierTable2 theta_x;  // dx component of theta_ex
  FourierTable2 theta_y;  // dy component of theta_ex

  bool flat_metric() const { return phi.empty(); }
  bool bounded_primitive_exists() const { return B == 0.0; }

  double conformal(const Vector2d& q) const { return std::exp(2.0 * phi(q)); }

  Matrix2d metric_at(const Vector2d& q) const {
    return conformal(q) * Matrix2d::Identity();
  }

  /** Christoffel symbols of g: gamma[k](i,j) = Gamma^k_ij. */
  std::array<Matrix2d, 2> christoffel(const Vector2d& q) const {
    const Vector2d dphi = phi.grad(q);
    std::array<Matrix2d, 2> gamma;
    for (int k = 0; k < 2; ++k) {
      Matrix2d m;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          m(i, j) = (i == k ? dphi(j) : 0.0) + (j == k ? dphi(i) : 0.0) -
                    (i == j ? dphi(k) : 0.0);
      gamma[k] = m;
    }
    return gamma;
  }

  /** Scalar density of sigma: sigma = b(q) dx^dy. */
  double sigma_density(const Vector2d& q) const {
    return B + theta_y.grad(q).x() - theta_x.grad(q).y();
  }

  /** Lorentz map Y with sigma_q(v,w) = <Y v, w>_g; g-antisymmetric. */
  Matrix2d lorentz_at(const Vector2d& q) const {
    const double c = sigma_density(q) / conformal(q);
    Matrix2d y;
    y << 0.0, -c, c, 0.0;
    return y;
  }

  /** Primitive of sigma on the cover (covector components at the lift q~). */
  Vector2d primitive_at(const Vector2d& q_cover) const {
    return {theta_x(q_cover), theta_y(q_cover) + B * q_cover.x()};
  }

  /** Jacobian d(theta)/dq of the cover primitive (row a = component theta_a). */
  Matrix2d primitive_jacobian(const Vector2d& q_cover) const {
    Matrix2d a;
    a.row(0) = theta_x.grad(q_cover).transpose();
    a.row(1) = theta_y.grad(q_cover).transpose();
    a(1, 0) += B;
    return a;
  }

  /** Pointwise norm of a covector at q: |p|_{g*} = e^{-phi}|p|. */
  double covector_norm(const Vector2d& q, const Vector2d& p) const {
    return p.norm() / std::exp(phi(q));
  }
};

namespace detail {

/** Extremum of a Fourier polynomial by grid scan plus safeguarded Newton. */
inline double fourier_extremum(const FourierTable2& f, bool maximize,
                               Vector2d* arg = nullptr) {
  const int n = 128;
  double best = maximize ? -1e300 : 1e300;
  Vector2d bq = Vector2d::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vector2d q(double(i) / n, double(j) / n);
      const double v = f(q);
      if (maximize ? v > best : v < best) {
        best = v;
        bq = q;
      }
    }
  Vector2d q = bq;
  for (int it = 0; it < 40; ++it) {
    const Vector2d g = f.grad(q);
    Matrix2d h = f.hess(q);
    if (std::abs(h.determinant()) < 1e-14) break;
    const Vector2d step = h.fullPivLu().solve(g);
    const Vector2d qn = q - step;
    const double vn = f(qn);
    if (maximize ? vn >= best : vn <= best) {
      best = vn;
      q = qn;
      if (step.norm() < 1e-14) break;
    } else {
      break;
    }
  }
  if (arg) *arg = q;
  return best;
}

}  // namespace detail

inline double u_max(const ManifoldModel& m, Vector2d* arg = nullptr) {
  if (m.U.empty()) {
    if (arg) *arg = Vector2d::Zero();
    return 0.0;
  }
  return detail::fourier_extremum(m.U, true, arg);
}

inline double u_min(const ManifoldModel& m, Vector2d* arg = nullptr) {
  if (m.U.empty()) {
    if (arg) *arg = Vector2d::Zero();
    return 0.0;
  }
  return detail::fourier_extremum(m.U, false, arg);
}

/** sup_q |theta_ex + const h|_{g*}; the bounded part of the primitive. */
inline double primitive_sup_norm(const ManifoldModel& m,
                                 const Vector2d& h = Vector2d::Zero()) {
  const int n = 256;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vector2d q(double(i) / n, double(j) / n);
      const Vector2d th(m.theta_x(q) + h.x(), m.theta_y(q) + h.y());
      s = std::max(s, m.covector_norm(q, th));
    }
  return s;
}

/**
 * Holonomy constant I(alpha, theta) = int_0^1 (q~_alpha^-)^* theta of the
 * reversed reference lift. Zero for the trivial class. The theta_ex part is
 * a trigonometric polynomial in t and is integrated exactly by trapezoid;
 * the B x~ dy part is polynomial in t and integrated in closed form.
 */
inline double holonomy_constant(const ManifoldModel& m, const ReferenceLoop& ref) {
  if (ref.cls.trivial()) return 0.0;
  const Vector2d a = ref.cls.vec();
  const int deg = std::max(m.theta_x.max_degree(), m.theta_y.max_degree());
  const int nq = std::max(64, 4 * deg * (std::abs(ref.cls.m1) + std::abs(ref.cls.m2)) + 8);
  double acc = 0.0;
  for (int i = 0; i < nq; ++i) {
    const double t = double(i) / nq;
    const Vector2d q = ref.base - t * a;  // reversed reference path
    acc += m.theta_x(q) * (-a.x()) + m.theta_y(q) * (-a.y());
  }
  acc /= nq;
  acc += -m.B * a.y() * (ref.base.x() - 0.5 * a.x());
  return acc;
}

}  // namespace magflow

#endif
