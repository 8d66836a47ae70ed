#include <catch2/catch_amalgamated.hpp>

#include "magflow/rabinowitz.hpp"
#include "magflow/rf_flow.hpp"

using namespace magflow;

namespace {

ManifoldModel flat_free;

ManifoldModel cos_potential(double eps) {
  ManifoldModel m;
  m.U.add(0, 1, eps, 0.0);
  return m;
}

ManifoldModel mixed_model() {
  ManifoldModel m;
  m.phi.add(1, 0, 0.08, 0.0);
  m.U.add(0, 1, 0.03, 0.0);
  m.theta_x.add(0, 1, 0.0, -0.15);
  m.theta_y.add(1, 1, 0.05, 0.02);
  return m;
}

DiscreteLoop wavy(int n, double amp = 0.07, double y0 = 0.21) {
  return make_loop({1, 0}, n, [amp, y0](double t) {
    return Vector2d(0.02 * std::sin(two_pi * t), y0 + amp * std::sin(two_pi * t));
  });
}

RabinowitzPoint bent_point(const ManifoldModel& m, int n) {
  RabinowitzPoint x = z_lift(m, wavy(n), 1.1, +1);
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / n;
    x.p(i, 0) += 0.05 * std::cos(two_pi * t);
    x.p(i, 1) -= 0.03 * std::sin(2 * two_pi * t);
  }
  x.eta = 0.8;
  return x;
}

}  // namespace

TEST_CASE("hamiltonian field: pinned flat magnetic example and conservation") {
  ManifoldModel m;
  m.B = 1.0;
  Vector4d x;
  x << 0.2, 0.7, 1.0, 0.0;
  const Vector4d f = hamiltonian_field(m, x);
  CHECK(f(0) == Catch::Approx(1.0));
  CHECK(f(1) == Catch::Approx(0.0).margin(1e-15));
  CHECK(f(2) == Catch::Approx(0.0).margin(1e-15));
  CHECK(f(3) == Catch::Approx(-1.0));

  // cyclotron orbit: p rotates at unit speed, period 2 pi
  const Vector4d back = hamiltonian_flow(m, x, two_pi, 2000);
  CHECK((back - x).norm() < 1e-10);

  // energy conservation on a curved model
  const ManifoldModel mc = mixed_model();
  Vector4d y;
  y << 0.1, 0.4, 0.8, -0.3;
  const double h0 = hamiltonian(mc, y.head<2>(), y.tail<2>());
  const MatrixXd traj = hamiltonian_trajectory(mc, y, 3.0, 3000);
  for (int i : {500, 1500, 3000}) {
    const Vector4d xi = traj.row(i).transpose();
    CHECK(hamiltonian(mc, xi.head<2>(), xi.tail<2>()) ==
          Catch::Approx(h0).margin(1e-9));
  }
}

TEST_CASE("lift identities: A(Z+) = S and A(Z-) = -S") {
  const double k = 0.6, t_period = 1.3;
  SECTION("exact magnetic form, nontrivial class") {
    const ManifoldModel m = mixed_model();
    const DiscreteLoop w = wavy(32);
    const double s = free_time_action(m, k, w, t_period);
    CHECK(rabinowitz_action(m, k, z_lift(m, w, t_period, +1)) ==
          Catch::Approx(s).margin(1e-13));
    CHECK(rabinowitz_action(m, k, z_lift(m, w, t_period, -1)) ==
          Catch::Approx(-s).margin(1e-13));
  }
  SECTION("flux form, contractible loop") {
    ManifoldModel m;
    m.B = 1.0;
    const DiscreteLoop w = make_loop({0, 0}, 32, [](double t) {
      return Vector2d(0.3 * std::cos(two_pi * t), 0.3 * std::sin(two_pi * t));
    });
    const double s = free_time_action(m, k, w, t_period);
    CHECK(rabinowitz_action(m, k, z_lift(m, w, t_period, +1)) ==
          Catch::Approx(s).margin(1e-13));
    CHECK(rabinowitz_action(m, k, z_lift(m, w, t_period, -1)) ==
          Catch::Approx(-s).margin(1e-13));
  }
}

TEST_CASE("reversal negates the action of arbitrary points") {
  const ManifoldModel m = mixed_model();
  const RabinowitzPoint x = bent_point(m, 32);
  CHECK(rabinowitz_action(m, 0.6, reverse_point(x)) ==
        Catch::Approx(-rabinowitz_action(m, 0.6, x)).margin(1e-13));
}

TEST_CASE("slack between the two functionals is the kinetic defect") {
  const ManifoldModel m = mixed_model();
  const double k = 0.6, t_period = 1.1;
  const DiscreteLoop w = wavy(32);
  MatrixX2d p = z_lift(m, w, t_period, +1).p;
  for (int i = 0; i < 32; ++i) p(i, 1) += 0.2 * std::cos(two_pi * double(i) / 32);

  const ActionComparison c = compare_actions(m, k, w, t_period, &p);
  CHECK(c.slack_plus > 0.0);
  CHECK(c.slack_plus == Catch::Approx(c.slack_minus).margin(1e-12));

  // direct quadrature of (T/2) |q'/T - p^sharp|_g^2
  const MatrixX2d v = loop_derivative(w);
  double want = 0.0;
  for (int i = 0; i < 32; ++i) {
    const Vector2d q = w.q.row(i).transpose();
    const Vector2d defect =
        v.row(i).transpose() / t_period - p.row(i).transpose() / m.conformal(q);
    want += 0.5 * t_period * m.conformal(q) * defect.squaredNorm();
  }
  CHECK(c.slack_plus == Catch::Approx(want / 32).margin(1e-13));

  // the exact lift has zero slack
  const ActionComparison c0 = compare_actions(m, k, w, t_period);
  CHECK(c0.slack_plus == Catch::Approx(0.0).margin(1e-13));
}

TEST_CASE("differential matches finite differences of the action") {
  const ManifoldModel m = mixed_model();
  const double k = 0.6;
  const RabinowitzPoint x = bent_point(m, 32);
  const RabinowitzDifferential d = rabinowitz_differential(m, k, x);

  const double h = 1e-6;
  for (int j : {0, 9, 23})
    for (int a = 0; a < 2; ++a) {
      RabinowitzPoint xp = x, xm = x;
      xp.q.q(j, a) += h;
      xm.q.q(j, a) -= h;
      CHECK(d.dq(j, a) == Catch::Approx((rabinowitz_action(m, k, xp) -
                                         rabinowitz_action(m, k, xm)) /
                                        (2 * h))
                              .margin(1e-8));
      xp = x;
      xm = x;
      xp.p(j, a) += h;
      xm.p(j, a) -= h;
      CHECK(d.dp(j, a) == Catch::Approx((rabinowitz_action(m, k, xp) -
                                         rabinowitz_action(m, k, xm)) /
                                        (2 * h))
                              .margin(1e-8));
    }
  RabinowitzPoint xp = x, xm = x;
  xp.eta += h;
  xm.eta -= h;
  CHECK(d.deta == Catch::Approx((rabinowitz_action(m, k, xp) -
                                 rabinowitz_action(m, k, xm)) /
                                (2 * h))
                      .margin(1e-9));
}

TEST_CASE("gradients satisfy the Riesz identity in both metrics") {
  const ManifoldModel m = mixed_model();
  const double k = 0.6;
  const RabinowitzPoint x = bent_point(m, 32);
  const RabinowitzDifferential d = rabinowitz_differential(m, k, x);

  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const GradMetric metric : {GradMetric::sasaki, GradMetric::compatible}) {
    const RabinowitzTangent g = rabinowitz_gradient(m, k, x, metric);
    for (int trial = 0; trial < 4; ++trial) {
      RabinowitzTangent rho;
      rho.vq.resize(32, 2);
      rho.vp.resize(32, 2);
      for (int i = 0; i < 32; ++i) {
        rho.vq.row(i) << u(rng), u(rng);
        rho.vp.row(i) << u(rng), u(rng);
      }
      rho.veta = u(rng);
      double pairing = d.deta * rho.veta;
      for (int i = 0; i < 32; ++i)
        pairing += d.dq.row(i).dot(rho.vq.row(i)) + d.dp.row(i).dot(rho.vp.row(i));
      CHECK(l2_inner(m, x, g, rho, metric) == Catch::Approx(pairing).margin(1e-11));
    }
  }
}

TEST_CASE("compatible frame is an omega-compatible complex structure") {
  ManifoldModel m = mixed_model();
  m.B = 0.4;  // nonzero sigma density to exercise the twisted part
  for (const Vector2d q : {Vector2d(0.0, 0.0), Vector2d(0.31, 0.77)}) {
    const CompatibleFrame f = compatible_frame(m, q);
    const Matrix4d omega = twisted_omega(m, q);
    CHECK((f.j * f.j + Matrix4d::Identity()).norm() < 1e-13);
    CHECK((f.metric - f.metric.transpose()).norm() < 1e-13);
    Eigen::SelfAdjointEigenSolver<Matrix4d> es(f.metric);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK((f.j.transpose() * omega * f.j - omega).norm() < 1e-13);
  }
  // with vanishing sigma density the construction reduces to the Sasaki form
  ManifoldModel m0;
  m0.phi.add(1, 0, 0.08, 0.0);
  m0.U.add(0, 1, 0.03, 0.0);
  const Vector2d q(0.2, 0.5);
  const CompatibleFrame f0 = compatible_frame(m0, q);
  const double c = m0.conformal(q);
  Matrix4d want = Matrix4d::Zero();
  want.block<2, 2>(0, 2) = -Matrix2d::Identity() / c;
  want.block<2, 2>(2, 0) = Matrix2d::Identity() * c;
  CHECK((f0.j - want).norm() < 1e-13);
}

TEST_CASE("compatible gradient is J (x' - eta X_H) along smooth points") {
  const ManifoldModel m = mixed_model();
  const double k = 0.6;
  RabinowitzPoint x = z_lift(m, wavy(64), 1.2, +1);
  x.eta = 0.9;  // off the critical relation on purpose
  const RabinowitzTangent g = rabinowitz_gradient(m, k, x, GradMetric::compatible);
  const MatrixX2d vq = loop_derivative(x.q);
  const MatrixX2d vp = spectral::diff_matrix(64) * x.p;
  for (int i : {0, 13, 40}) {
    const Vector2d q = x.q.q.row(i).transpose();
    Vector4d xdot, state;
    xdot << vq.row(i).transpose(), vp.row(i).transpose();
    state << q, x.p.row(i).transpose();
    const Vector4d want =
        compatible_frame(m, q).j * (xdot - x.eta * hamiltonian_field(m, state));
    CHECK(g.vq(i, 0) == Catch::Approx(want(0)).margin(1e-9));
    CHECK(g.vq(i, 1) == Catch::Approx(want(1)).margin(1e-9));
    CHECK(g.vp(i, 0) == Catch::Approx(want(2)).margin(1e-9));
    CHECK(g.vp(i, 1) == Catch::Approx(want(3)).margin(1e-9));
  }
}

TEST_CASE("lifted critical orbits are critical points of the Rabinowitz action") {
  const ManifoldModel m = cos_potential(0.05);
  const CriticalOrbit orb =
      find_critical(m, 0.5, straight_loop({1, 0}, 32, Vector2d::Zero()), 1.0);
  REQUIRE(orb.converged);
  for (int sign : {+1, -1}) {
    const RabinowitzPoint z = z_lift(m, orb.loop, orb.T, sign);
    CHECK(rabinowitz_residual(m, 0.5, z) < 1e-9);
  }
}

TEST_CASE("constant points on the level have a three dimensional kernel") {
  for (const ManifoldModel& m : {cos_potential(0.05), mixed_model()}) {
    const KernelReport rep = constant_hessian_kernel(m, 0.5, Vector2d(0.13, 0.27), 16);
    CHECK(rep.near_zero == 3);
    CHECK(rep.gap >= 1e3);
  }
  CHECK_THROWS_AS(constant_point(cos_potential(0.05), 0.03, Vector2d(0.0, 0.0), 16),
                  ConfigError);
}

TEST_CASE("eta bound constants at the flat level one half") {
  const EtaBounds b = eta_bound_constants(flat_free, 0.5, 0.1, -2.0, 2.0, 0.0);
  CHECK(b.delta_hat == Catch::Approx(0.05));
  CHECK(2.0 * b.delta == Catch::Approx(0.9));
  CHECK(b.d_sup == Catch::Approx(std::sqrt(1.1)));
  CHECK(b.rho1 == Catch::Approx(1.0 / 0.45));
  CHECK(b.c0 == Catch::Approx((1.0 / 0.45) * 3.0 + 4.0 / 0.1));

  ManifoldModel magnetic;
  magnetic.B = 1.0;
  CHECK_THROWS_AS(eta_bound_constants(magnetic, 0.5, 0.1, -2, 2, 0.0), ConfigError);
  CHECK_THROWS_AS(eta_bound_constants(cos_potential(0.05), 0.01, 0.1, -2, 2, 0.0),
                  ConfigError);
}

TEST_CASE("rho0 estimation from flow samples") {
  const auto [r1, e1] = estimate_rho0({{0.5, false}, {0.05, true}, {0.2, false}});
  CHECK(r1 == Catch::Approx(0.1));
  CHECK(e1);
  const auto [r2, e2] = estimate_rho0({{0.05, false}, {0.2, true}});
  CHECK(r2 == Catch::Approx(0.0495));
}

TEST_CASE("gradient flow descends monotonically until it leaves the window") {
  const ManifoldModel m = cos_potential(0.05);
  RabinowitzPoint x0 = bent_point(m, 32);
  for (const GradMetric metric : {GradMetric::sasaki, GradMetric::compatible}) {
    FlowOptions opt;
    opt.metric = metric;
    opt.c0 = 46.7;
    opt.action_window = {{-2.0, 2.0}};
    const FlowReport rep = rabinowitz_flow(m, 0.5, x0, opt);
    CHECK(rep.samples.size() > 5);
    CHECK(rep.monotone);
    CHECK(rep.energy_ok);
    CHECK(rep.eta_within);
    CHECK_FALSE(rep.blew_up);
    CHECK_FALSE(rep.step_underflow);
    // the functional is unbounded below: the line descends out of the window
    CHECK(rep.exited_window);
    CHECK(rep.samples.back().action < rep.samples.front().action);
  }
}

TEST_CASE("truncation profile: identity region is branch-exact") {
  const TruncationProfile tr{10.0, 0.1};
  for (const double h : {0.0, 0.5, 5.0, 8.9999}) {
    CHECK(tr.value(h) == h);  // bitwise
    CHECK(tr.slope(h) == 1.0);
  }
  CHECK(tr.value(11.0) == Catch::Approx(10.0));
  CHECK(tr.value(50.0) == 10.0);
  CHECK(tr.slope(11.0) == 0.0);
  // continuity and monotonicity across the ramp
  double prev = tr.value(8.99);
  for (double h = 8.99; h <= 11.01; h += 0.005) {
    const double v = tr.value(h);
    CHECK(v >= prev - 1e-12);
    CHECK(v <= h + 1e-12);
    prev = v;
  }
  CHECK_THROWS_AS(check_truncation(flat_free, 0.5, 0.9), ConfigError);
  check_truncation(flat_free, 0.5, 10.0);
}

TEST_CASE("truncated flow agrees below the cutoff and freezes above") {
  const TruncationProfile tr{10.0, 0.1};
  Vector4d x;
  x << 0.1, 0.2, 1.0, 0.0;  // H = 1/2, far below (1 - delta) R
  const ManifoldModel m = cos_potential(0.05);
  const MatrixXd plain = hamiltonian_trajectory(m, x, 2.0, 400);
  const MatrixXd trunc = hamiltonian_trajectory(m, x, 2.0, 400, &tr);
  CHECK((plain - trunc).lpNorm<Eigen::Infinity>() == 0.0);  // bitwise lockstep

  Vector4d hot;
  hot << 0.1, 0.2, 12.0, 0.0;  // H = 72, beyond (1 + delta) R: field vanishes
  const MatrixXd frozen = hamiltonian_trajectory(m, hot, 1.0, 50, &tr);
  CHECK((frozen.bottomRows<1>() - frozen.topRows<1>()).norm() == 0.0);
}
