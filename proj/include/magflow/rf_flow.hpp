#ifndef MAGFLOW_RF_FLOW_HPP
#define MAGFLOW_RF_FLOW_HPP

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "magflow/rabinowitz.hpp"

namespace magflow {

/**
 * Energy truncation H_R = R rho(H/R): the identity below (1-delta) R, frozen
 * at R above (1+delta) R, glued by a quintic ramp. Inside the identity region
 * the value and slope are returned branch-exactly, so trajectories there
 * coincide bitwise with the untruncated flow.
 */
struct TruncationProfile {
  double R = 1.0;
  double delta = 0.1;

  double value(double h) const {
    const double t = h / R;
    if (t <= 1.0 - delta) return h;
    if (t >= 1.0 + delta) return R;
    const double u = (t - (1.0 - delta)) / (2.0 * delta);
    const double ramp = u * u * u * u * (2.5 + u * (-3.0 + u));  // int smoothstep5
    return h - 2.0 * delta * R * ramp;
  }

  double slope(double h) const {
    const double t = h / R;
    if (t <= 1.0 - delta) return 1.0;
    if (t >= 1.0 + delta) return 0.0;
    return 1.0 - smoothstep5((t - (1.0 - delta)) / (2.0 * delta));
  }
};

/** The cutoff must sit far above the level set: R > 2k + sup|U|. */
inline void check_truncation(const ManifoldModel& m, double k, double R) {
  const double u_sup = std::max(std::abs(u_max(m)), std::abs(u_min(m)));
  if (!(R > 2.0 * k + u_sup))
    throw ConfigError("truncation radius must exceed 2k + sup|U|");
}

/** Fixed-step RK4 trajectory of X_H (or X_{H_R}); rows are (q, p) states. */
inline MatrixXd hamiltonian_trajectory(const ManifoldModel& m, const Vector4d& x0,
                                       double time, int steps,
                                       const TruncationProfile* trunc = nullptr) {
  if (steps < 1) throw ConfigError("need at least one step");
  auto rhs = [&](const Vector4d& x) -> Vector4d {
    const Vector4d f = hamiltonian_field(m, x);
    if (!trunc) return f;
    return trunc->slope(hamiltonian(m, x.head<2>(), x.tail<2>())) * f;
  };
  MatrixXd traj(steps + 1, 4);
  Vector4d x = x0;
  traj.row(0) = x.transpose();
  const double h = time / steps;
  for (int i = 0; i < steps; ++i) {
    const Vector4d k1 = rhs(x);
    const Vector4d k2 = rhs(x + 0.5 * h * k1);
    const Vector4d k3 = rhs(x + 0.5 * h * k2);
    const Vector4d k4 = rhs(x + h * k3);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    traj.row(i + 1) = x.transpose();
  }
  return traj;
}

inline Vector4d hamiltonian_flow(const ManifoldModel& m, const Vector4d& x0, double time,
                                 int steps, const TruncationProfile* trunc = nullptr) {
  return hamiltonian_trajectory(m, x0, time, steps, trunc)
      .bottomRows<1>()
      .transpose();
}

struct FlowOptions {
  double s_max = 2.0;
  double rtol = 1e-7;
  double atol = 1e-9;
  double h_init = 1e-3;
  double h_max = 0.05;
  double sup_p_cap = 50.0;
  GradMetric metric = GradMetric::sasaki;
  std::optional<double> c0;  // eta bound to monitor, if available
  // The functional is unbounded below, so generic flow lines escape in finite
  // time; the boundedness estimates hold within a fixed action window. When
  // set, the flow stops at the first node whose action leaves [lo, hi].
  std::optional<std::pair<double, double>> action_window;
};

struct FlowSample {
  double s = 0.0;
  double action = 0.0;
  double eta = 0.0;
  double grad_norm = 0.0;
  double sup_p = 0.0;
  double band_dist = 0.0;  // max_i |H(x_i) - k|
};

struct FlowReport {
  std::vector<FlowSample> samples;
  RabinowitzPoint final;
  bool monotone = true;
  double energy_defect = 0.0;  // |Delta A + int ||grad||^2 ds| by trapezoid
  double energy_bound = 0.0;
  bool energy_ok = false;
  bool eta_within = true;
  bool blew_up = false;
  bool step_underflow = false;
  bool exited_window = false;
};

/**
 * Negative gradient flow of the Rabinowitz action, adaptive embedded RK23
 * with a forced action-decrease acceptance rule. Along the exact flow
 * dA/ds = -||grad A||^2; the report quantifies that identity by trapezoid
 * quadrature over the accepted nodes.
 */
inline FlowReport rabinowitz_flow(const ManifoldModel& m, double k,
                                  const RabinowitzPoint& x0,
                                  const FlowOptions& opt = {}) {
  check_point(x0);
  const HomotopyClass cls = x0.q.cls;
  const int n = x0.q.N();

  auto rhs = [&](const VectorXd& z) {
    const RabinowitzPoint x = detail::unpack_point(z, cls);
    const RabinowitzTangent g = rabinowitz_gradient(m, k, x, opt.metric);
    RabinowitzDifferential d;  // reuse packing for the tangent
    d.dq = -g.vq;
    d.dp = -g.vp;
    d.deta = -g.veta;
    return detail::pack_differential(d);
  };
  auto norm_at = [&](const VectorXd& z, const VectorXd& deriv) {
    const RabinowitzPoint x = detail::unpack_point(z, cls);
    RabinowitzTangent g;
    const RabinowitzPoint as_pt = detail::unpack_point(deriv, cls);
    g.vq = as_pt.q.q;
    g.vp = as_pt.p;
    g.veta = as_pt.eta;
    return gradient_norm(m, x, g, opt.metric);
  };
  auto band_dist = [&](const RabinowitzPoint& x) {
    double d = 0.0;
    for (int i = 0; i < n; ++i)
      d = std::max(d, std::abs(hamiltonian(m, x.q.q.row(i).transpose(),
                                           x.p.row(i).transpose()) -
                               k));
    return d;
  };

  FlowReport rep;
  VectorXd z = detail::pack_point(x0);
  double s = 0.0;
  double action = rabinowitz_action(m, k, x0);
  VectorXd k1 = rhs(z);
  double grad_norm = norm_at(z, k1);
  rep.samples.push_back(
      {0.0, action, x0.eta, grad_norm, sup_momentum(x0), band_dist(x0)});
  auto outside_window = [&](double a) {
    return opt.action_window &&
           (a < opt.action_window->first || a > opt.action_window->second);
  };
  if (outside_window(action)) rep.exited_window = true;

  double h = opt.h_init;
  double energy_int = 0.0;
  while (s < opt.s_max && !rep.exited_window) {
    h = std::min({h, opt.h_max, opt.s_max - s});
    if (h < 1e-12) {
      rep.step_underflow = true;
      break;
    }
    const VectorXd k2 = rhs(z + 0.5 * h * k1);
    const VectorXd k3 = rhs(z + 0.75 * h * k2);
    const VectorXd z_new = z + h * (2.0 / 9.0 * k1 + 1.0 / 3.0 * k2 + 4.0 / 9.0 * k3);
    const VectorXd k4 = rhs(z_new);
    const VectorXd z_low =
        z + h * (7.0 / 24.0 * k1 + 0.25 * k2 + 1.0 / 3.0 * k3 + 0.125 * k4);

    double err = 0.0;
    for (int i = 0; i < z.size(); ++i) {
      const double scale =
          opt.atol + opt.rtol * std::max(std::abs(z(i)), std::abs(z_new(i)));
      const double e = (z_new(i) - z_low(i)) / scale;
      err += e * e;
    }
    err = std::sqrt(err / z.size());

    const RabinowitzPoint x_new = detail::unpack_point(z_new, cls);
    const double action_new = rabinowitz_action(m, k, x_new);
    const bool decreased = action_new <= action + 1e-13 * (1.0 + std::abs(action));
    if (err <= 1.0 && decreased) {
      const double gn_new = norm_at(z_new, k4);
      energy_int += 0.5 * h * (grad_norm * grad_norm + gn_new * gn_new);
      s += h;
      z = z_new;
      k1 = k4;  // first-same-as-last
      action = action_new;
      grad_norm = gn_new;
      rep.samples.push_back(
          {s, action, x_new.eta, grad_norm, sup_momentum(x_new), band_dist(x_new)});
      if (rep.samples.back().sup_p > opt.sup_p_cap) {
        rep.blew_up = true;
        break;
      }
      if (outside_window(action)) {
        rep.exited_window = true;
        break;
      }
      const double grow = (err > 0) ? 0.9 * std::pow(err, -1.0 / 3.0) : 5.0;
      h *= std::clamp(grow, 0.2, 5.0);
    } else if (err > 1.0) {
      h *= std::clamp(0.9 * std::pow(err, -1.0 / 3.0), 0.2, 0.9);
    } else {
      h *= 0.5;  // integration fine but the action rose: refine
    }
  }

  for (size_t i = 1; i < rep.samples.size(); ++i)
    if (rep.samples[i].action >
        rep.samples[i - 1].action + 1e-12 * (1.0 + std::abs(rep.samples[i].action)))
      rep.monotone = false;
  if (opt.c0)
    for (const auto& smp : rep.samples)
      if (std::abs(smp.eta) > *opt.c0) rep.eta_within = false;

  const double delta_a = rep.samples.back().action - rep.samples.front().action;
  rep.energy_defect = std::abs(delta_a + energy_int);
  rep.energy_bound = 5e-5 * (1.0 + std::abs(delta_a));
  rep.energy_ok = rep.energy_defect <= rep.energy_bound;
  rep.final = detail::unpack_point(z, cls);
  return rep;
}

}  // namespace magflow

#endif
