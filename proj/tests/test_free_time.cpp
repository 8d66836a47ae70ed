#include <catch2/catch_amalgamated.hpp>

#include "magflow/free_time.hpp"

using namespace magflow;

namespace {

ManifoldModel flat_free;

ManifoldModel cos_potential(double eps) {
  ManifoldModel m;
  m.U.add(0, 1, eps, 0.0);  // U = eps cos(2 pi y)
  return m;
}

ManifoldModel mixed_model() {
  ManifoldModel m;
  m.phi.add(1, 0, 0.08, 0.0);
  m.U.add(0, 1, 0.03, 0.0);
  m.theta_x.add(0, 1, 0.0, -0.15);  // 0.15 sin(2 pi y) dx
  m.theta_y.add(1, 1, 0.05, 0.02);
  return m;
}

DiscreteLoop wavy(int n, double amp, double y0 = 0.0) {
  return make_loop({1, 0}, n, [amp, y0](double t) {
    return Vector2d(0.02 * std::sin(two_pi * t), y0 + amp * std::sin(two_pi * t));
  });
}

}  // namespace

TEST_CASE("action of the flat straight loop") {
  const DiscreteLoop w = straight_loop({1, 0}, 32, Vector2d::Zero());
  // S = E/(2T) + kT with E = 1
  CHECK(free_time_action(flat_free, 0.5, w, 2.0) == Catch::Approx(0.25 + 1.0));
  CHECK(mean_energy(flat_free, w, 2.0) == Catch::Approx(0.125));
  CHECK_THROWS_AS(free_time_action(flat_free, 0.5, w, -1.0), ConfigError);
}

TEST_CASE("differential matches finite differences of the action") {
  const ManifoldModel m = mixed_model();
  const double k = 0.6, t_period = 1.3;
  const DiscreteLoop w = wavy(32, 0.07, 0.21);
  const ActionDifferential d = free_time_differential(m, k, w, t_period);

  const double h = 1e-6;
  for (int j : {0, 5, 17, 31})
    for (int a = 0; a < 2; ++a) {
      DiscreteLoop wp = w, wm = w;
      wp.q(j, a) += h;
      wm.q(j, a) -= h;
      const double fd = (free_time_action(m, k, wp, t_period) -
                         free_time_action(m, k, wm, t_period)) /
                        (2 * h);
      CHECK(d.dq(j, a) == Catch::Approx(fd).margin(1e-8));
    }
  const double fd_t = (free_time_action(m, k, w, t_period + h) -
                       free_time_action(m, k, w, t_period - h)) /
                      (2 * h);
  CHECK(d.dT == Catch::Approx(fd_t).margin(1e-8));
}

TEST_CASE("hessian is symmetric and matches finite differences") {
  const ManifoldModel m = mixed_model();
  const double k = 0.6, t_period = 1.3;
  const DiscreteLoop w = wavy(16, 0.07, 0.21);
  const MatrixXd h = free_time_hessian(m, k, w, t_period);
  CHECK((h - h.transpose()).lpNorm<Eigen::Infinity>() < 1e-13);

  const double eps = 1e-6;
  auto diff_at = [&](const DiscreteLoop& loop, double tp) {
    return free_time_differential(m, k, loop, tp);
  };
  for (int col : {0, 7, 20}) {
    DiscreteLoop wp = w, wm = w;
    wp.q(col / 2, col % 2) += eps;
    wm.q(col / 2, col % 2) -= eps;
    const ActionDifferential dp = diff_at(wp, t_period), dm_ = diff_at(wm, t_period);
    for (int row : {1, 12, 29}) {
      const double fd = (dp.dq(row / 2, row % 2) - dm_.dq(row / 2, row % 2)) / (2 * eps);
      CHECK(h(row, col) == Catch::Approx(fd).margin(1e-7));
    }
    const double fd_t = (dp.dT - dm_.dT) / (2 * eps);
    CHECK(h(2 * w.N(), col) == Catch::Approx(fd_t).margin(1e-7));
  }
  const ActionDifferential dp = diff_at(w, t_period + eps), dm_ = diff_at(w, t_period - eps);
  CHECK(h(2 * w.N(), 2 * w.N()) == Catch::Approx((dp.dT - dm_.dT) / (2 * eps)).margin(1e-7));
}

TEST_CASE("W12 gradient satisfies the Riesz identity") {
  const double k = 0.6, t_period = 1.3;
  Rng rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const bool flat : {true, false}) {
    const ManifoldModel m = flat ? flat_free : mixed_model();
    const DiscreteLoop w = wavy(32, 0.07, 0.21);
    const ActionDifferential d = free_time_differential(m, k, w, t_period);
    const TangentField g = w_gradient(m, k, w, t_period);
    for (int trial = 0; trial < 5; ++trial) {
      TangentField rho;
      rho.v.resize(32, 2);
      for (int i = 0; i < 32; ++i) rho.v.row(i) << u(rng), u(rng);
      rho.b = u(rng);
      double pairing = d.dT * rho.b;
      for (int i = 0; i < 32; ++i) pairing += d.dq.row(i).dot(rho.v.row(i));
      CHECK(w12_inner(m, w, g, rho) == Catch::Approx(pairing).margin(1e-12));
    }
  }
}

TEST_CASE("flat geodesic: period and action are exact") {
  const double k = 0.5;
  const CriticalOrbit orb = find_critical(flat_free, k, wavy(64, 0.05), 1.3);
  CHECK(orb.converged);
  CHECK(orb.residual < 1e-10);
  CHECK(orb.T == Catch::Approx(1.0).margin(1e-8));
  CHECK(orb.S == Catch::Approx(1.0).margin(1e-8));
  // the orbit straightens out
  const MatrixX2d per = periodic_part(orb.loop);
  CHECK((per.rowwise() - per.colwise().mean()).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("cos potential: both horizontal orbits, exact closed forms") {
  const double eps = 0.05, k = 0.5;
  const ManifoldModel m = cos_potential(eps);

  SECTION("ridge orbit at y = 0") {
    const CriticalOrbit orb =
        find_critical(m, k, straight_loop({1, 0}, 32, Vector2d::Zero()), 1.0);
    CHECK(orb.converged);
    CHECK(orb.T == Catch::Approx(1.0 / std::sqrt(2.0 * (k - eps))).epsilon(1e-10));
    CHECK(orb.S == Catch::Approx(std::sqrt(2.0 * (k - eps))).epsilon(1e-10));
  }
  SECTION("valley orbit at y = 1/2") {
    const CriticalOrbit orb =
        find_critical(m, k, straight_loop({1, 0}, 32, Vector2d(0.0, 0.5)), 1.0);
    CHECK(orb.converged);
    CHECK(orb.T == Catch::Approx(1.0 / std::sqrt(2.0 * (k + eps))).epsilon(1e-10));
    CHECK(orb.S == Catch::Approx(std::sqrt(2.0 * (k + eps))).epsilon(1e-10));
    CHECK(std::abs(std::remainder(orb.loop.q.col(1).mean(), 1.0)) ==
          Catch::Approx(0.5).margin(1e-8));
  }
  SECTION("descent from a tilted start lands on the ridge minimizer") {
    const CriticalOrbit orb = find_critical(m, k, wavy(32, 0.04, 0.08), 1.2);
    CHECK(orb.converged);
    CHECK(orb.S == Catch::Approx(std::sqrt(2.0 * (k - eps))).margin(1e-9));
  }
}

TEST_CASE("action reversal splits into even and odd parts") {
  ManifoldModel m = mixed_model();
  const double k = 0.6, t_period = 0.9;
  const DiscreteLoop w = wavy(32, 0.07, 0.21);
  ManifoldModel geom_only = m;
  geom_only.theta_x = {};
  geom_only.theta_y = {};
  const double s_fwd = free_time_action(m, k, w, t_period);
  const double s_rev = free_time_action(m, k, reverse_loop(w), t_period);
  const double s_even = free_time_action(geom_only, k, w, t_period);
  CHECK(s_fwd + s_rev == Catch::Approx(2.0 * s_even).margin(1e-12));
}

TEST_CASE("action is stable under trigonometric resampling") {
  const ManifoldModel m = mixed_model();
  const DiscreteLoop w = wavy(32, 0.07, 0.21);
  const double s32 = free_time_action(m, 0.6, w, 1.3);
  const double s64 = free_time_action(m, 0.6, resample(w, 64), 1.3);
  CHECK(s32 == Catch::Approx(s64).margin(1e-10));
}

TEST_CASE("monitor constants") {
  const MonitorConstants flat = monitor_constants(flat_free, 0.5);
  CHECK(flat.active);
  CHECK(flat.theta_sup == 0.0);
  CHECK(flat.h0 == Catch::Approx(1.25));
  REQUIRE(flat.h1.has_value());
  CHECK(*flat.h1 == Catch::Approx(1.0));

  const MonitorConstants pot = monitor_constants(cos_potential(0.05), 0.5);
  CHECK(pot.h0 == Catch::Approx(0.05 + 1.5 * 0.55 + 0.5));
  REQUIRE(pot.h1.has_value());
  CHECK(*pot.h1 == Catch::Approx(1.0 / (0.9 - 0.0)));

  ManifoldModel magnetic;
  magnetic.B = 1.0;
  CHECK_FALSE(monitor_constants(magnetic, 0.5).active);
}

TEST_CASE("descent flow honours the structural monitors") {
  SECTION("short-period start: period derivative must be negative above the bound") {
    const DescentReport rep =
        descend_flow(flat_free, 0.5, straight_loop({1, 0}, 32, Vector2d::Zero()), 0.1);
    CHECK(rep.reached_tol);
    CHECK(rep.bound_checks > 0);
    CHECK(rep.bound_violations == 0);
    CHECK(rep.trap_violations == 0);
    for (size_t i = 1; i < rep.path.size(); ++i)
      CHECK(rep.path[i].S <= rep.path[i - 1].S + 1e-14);
    CHECK(rep.T == Catch::Approx(1.0).margin(1e-2));
  }
  SECTION("contractible loop at positive level collapses") {
    const DiscreteLoop circle = make_loop({0, 0}, 32, [](double t) {
      return Vector2d(0.1 * std::cos(two_pi * t), 0.1 * std::sin(two_pi * t));
    });
    const DescentReport rep = descend_flow(flat_free, 0.5, circle, 1.0, 4000);
    CHECK(rep.collapsed);
    CHECK((rep.collapse_kind == "period" || rep.collapse_kind == "point"));
  }
}

TEST_CASE("Morse indices of the two horizontal orbits") {
  const double k = 0.5;
  for (const double eps : {0.01, 0.05}) {
    const ManifoldModel m = cos_potential(eps);
    const CriticalOrbit ridge =
        find_critical(m, k, straight_loop({1, 0}, 32, Vector2d::Zero()), 1.0);
    const CriticalOrbit valley =
        find_critical(m, k, straight_loop({1, 0}, 32, Vector2d(0.0, 0.5)), 1.0);
    REQUIRE(ridge.converged);
    REQUIRE(valley.converged);

    const MorseIndices ir = morse_indices(m, k, ridge.loop, ridge.T);
    CHECK(ir.i == 0);
    CHECK(ir.i_t == 0);
    CHECK(ir.nullity == 1);

    const MorseIndices iv = morse_indices(m, k, valley.loop, valley.T);
    CHECK(iv.i == 1);
    CHECK(iv.i_t == 1);
    CHECK(iv.nullity == 1);

    // index identity i = i_T + 1/2 - chi/2 with chi = +1 on both orbits
    CHECK(ir.i == ir.i_t + 0);
    CHECK(iv.i == iv.i_t + 0);
  }
}

TEST_CASE("Morse indices are stable under grid doubling") {
  const ManifoldModel m = cos_potential(0.05);
  const double k = 0.5;
  double s_prev = 0.0;
  for (const int n : {32, 64}) {
    const CriticalOrbit orbit =
        find_critical(m, k, straight_loop({1, 0}, n, Vector2d(0.0, 0.5)), 1.0);
    REQUIRE(orbit.converged);
    const MorseIndices idx = morse_indices(m, k, orbit.loop, orbit.T);
    CHECK(idx.i == 1);
    CHECK(idx.i_t == 1);
    CHECK(idx.nullity == 1);
    if (n > 32) CHECK(orbit.S == Catch::Approx(s_prev).margin(1e-8));
    s_prev = orbit.S;
  }
}

TEST_CASE("degenerate flat family reads nullity 2") {
  const CriticalOrbit geo =
      find_critical(flat_free, 0.5, straight_loop({1, 0}, 32, Vector2d::Zero()), 1.0);
  REQUIRE(geo.converged);
  const MorseIndices idx = morse_indices(flat_free, 0.5, geo.loop, geo.T);
  CHECK(idx.nullity == 2);
  CHECK(idx.i == 0);
}
