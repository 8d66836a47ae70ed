#ifndef MAGFLOW_FOURIER_HPP
#define MAGFLOW_FOURIER_HPP

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "magflow/util.hpp"

namespace magflow {

using Eigen::Matrix2d;
using Eigen::Vector2d;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/**
 * Real trigonometric polynomial on the 2-torus.
 *
 * Each row (kx, ky, re, im) contributes Re[(re + i*im) e^{2*pi*i(kx x + ky y)}],
 * so f and every derivative are evaluated in closed form.
 */
class FourierTable2 {
 public:
  struct Mode {
    int kx = 0, ky = 0;
    double re = 0.0, im = 0.0;
  };

  FourierTable2() = default;
  explicit FourierTable2(std::vector<Mode> modes) : modes_(std::move(modes)) {}

  bool empty() const { return modes_.empty(); }
  const std::vector<Mode>& modes() const { return modes_; }
  void add(int kx, int ky, double re, double im) { modes_.push_back({kx, ky, re, im}); }

  int max_degree() const {
    int d = 0;
    for (const auto& m : modes_) d = std::max({d, std::abs(m.kx), std::abs(m.ky)});
    return d;
  }

  double operator()(const Vector2d& q) const {
    double f = 0.0;
    for (const auto& m : modes_) {
      const double ph = two_pi * (m.kx * q.x() + m.ky * q.y());
      f += m.re * std::cos(ph) - m.im * std::sin(ph);
    }
    return f;
  }

  Vector2d grad(const Vector2d& q) const {
    Vector2d g = Vector2d::Zero();
    for (const auto& m : modes_) {
      const double ph = two_pi * (m.kx * q.x() + m.ky * q.y());
      const double d = -two_pi * (m.re * std::sin(ph) + m.im * std::cos(ph));
      g.x() += m.kx * d;
      g.y() += m.ky * d;
    }
    return g;
  }

  Matrix2d hess(const Vector2d& q) const {
    Matrix2d h = Matrix2d::Zero();
    for (const auto& m : modes_) {
      const double ph = two_pi * (m.kx * q.x() + m.ky * q.y());
      const double d2 = -two_pi * two_pi * (m.re * std::cos(ph) - m.im * std::sin(ph));
      h(0, 0) += m.kx * m.kx * d2;
      h(0, 1) += m.kx * m.ky * d2;
      h(1, 1) += m.ky * m.ky * d2;
    }
    h(1, 0) = h(0, 1);
    return h;
  }

  /** Upper bound sup |f| <= sum of coefficient magnitudes. */
  double sup_bound() const {
    double s = 0.0;
    for (const auto& m : modes_) s += std::hypot(m.re, m.im);
    return s;
  }

 private:
  std::vector<Mode> modes_;
};

/** C^inf bump on (0,1), vanishing to all orders at both ends. */
inline double bump01(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return std::exp(-1.0 / (u * (1.0 - u)));
}

/** C^inf plateau profile: 1 at u=0, support in (-1,1), flat to all orders at 0. */
inline double plateau(double u) {
  const double v = u * u;
  if (v >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - v));
}

inline double plateau_d(double u) {
  const double v = u * u;
  if (v >= 1.0) return 0.0;
  const double w = 1.0 - v;
  return std::exp(1.0 - 1.0 / w) * (-2.0 * u / (w * w));
}

/** Quintic smoothstep: s(0)=0, s(1)=1, s'(0)=s'(1)=s''(0)=s''(1)=0, int_0^1 s = 1/2. */
inline double smoothstep5(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

}  // namespace magflow

#endif
