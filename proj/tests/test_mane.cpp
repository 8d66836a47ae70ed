#include <catch2/catch_amalgamated.hpp>

#include "magflow/mane.hpp"

using namespace magflow;

namespace {

ManifoldModel flat_free;

ManifoldModel cos_potential(double eps) {
  ManifoldModel m;
  m.U.add(0, 1, eps, 0.0);
  return m;
}

ManifoldModel flat_magnetic(double b) {
  ManifoldModel m;
  m.B = b;
  return m;
}

/** theta_ex = grad(0.3 cos(2 pi (x + y))): removable by a single gauge mode. */
ManifoldModel gradient_theta_model() {
  ManifoldModel m;
  m.U.add(1, 0, 0.02, 0.0);
  const double amp = 0.3 * two_pi;  // -0.3 * 2 pi * sin component
  m.theta_x.add(1, 1, 0.0, amp);
  m.theta_y.add(1, 1, 0.0, amp);
  return m;
}

DiscreteLoop circle(double r, int orientation, int n = 64) {
  return make_loop({0, 0}, n, [&](double t) -> Vector2d {
    const double a = two_pi * t * orientation;
    return r * Vector2d(std::cos(a), std::sin(a));
  });
}

}  // namespace

TEST_CASE("witness value closed forms") {
  SECTION("flat circle: sqrt(2 E k) at T* = sqrt(E / 2k)") {
    double t_star = 0.0;
    const double w = witness_value(flat_free, 0.5, circle(1.0, +1), &t_star);
    CHECK(w == Catch::Approx(two_pi).margin(1e-9));
    CHECK(t_star == Catch::Approx(two_pi).margin(1e-9));
  }
  SECTION("magnetic circle gains the enclosed flux") {
    const double w = witness_value(flat_magnetic(1.0), 2.0, circle(16.0, -1));
    CHECK(w == Catch::Approx(64.0 * std::numbers::pi - 256.0 * std::numbers::pi)
                   .margin(1e-7));
  }
  SECTION("below the mean potential any long period certifies") {
    const ManifoldModel m = cos_potential(0.05);
    const DiscreteLoop at_max = straight_loop({0, 0}, 32, Vector2d(0.0, 0.0));
    CHECK(witness_value(m, 0.02, at_max) < -1.0);
  }
  CHECK_THROWS_AS(
      witness_value(flat_free, 0.5, straight_loop({1, 0}, 32, Vector2d::Zero())),
      ConfigError);
}

TEST_CASE("witness search certifies magnetic levels and rejects flat ones") {
  const WitnessReport wit = find_witness(flat_magnetic(1.0), 10.0);
  CHECK(wit.found);
  CHECK(wit.value < 0.0);
  CHECK(wit.value_fine < 0.0);
  CHECK(wit.loop.cls.trivial());

  CHECK_FALSE(find_witness(flat_free, 0.5).found);

  CHECK(find_witness(cos_potential(0.05), 0.02).found);
}

TEST_CASE("critical level brackets") {
  SECTION("flat free: zero to machine scale") {
    const ManeBracket b = mane_bracket(flat_free);
    CHECK_FALSE(b.upper_is_infinite);
    CHECK(b.e0 == 0.0);
    CHECK(b.lower >= -1e-3);
    CHECK(b.upper <= 1e-3);
    CHECK(b.lower <= b.upper);
    CHECK(b.c0_lower == b.lower);
    CHECK(b.c0_upper == b.upper);
  }
  SECTION("cosine potential: pinched onto the maximum of U") {
    for (const double eps : {0.01, 0.05}) {
      const ManeBracket b = mane_bracket(cos_potential(eps));
      CHECK(b.e0 == Catch::Approx(eps).margin(1e-9));
      CHECK(b.lower <= eps + 1e-12);
      CHECK(b.upper >= eps - 1e-12);
      CHECK(b.upper - b.lower < 1e-2 * eps + 1e-4);
    }
  }
  SECTION("magnetic flux: every probed level is witnessed") {
    const ManeBracket b = mane_bracket(flat_magnetic(1.0));
    CHECK(b.upper_is_infinite);
    CHECK(std::isinf(b.upper));
    REQUIRE(b.probed.size() == 10);
    for (const bool w : b.witnessed) CHECK(w);
    CHECK(b.lower >= 10.0);
  }
}

TEST_CASE("gauge search removes the exact part of the primitive") {
  const ManifoldModel m = gradient_theta_model();
  const double initial = gauge_initial_value(m);
  CHECK(initial > 3.0);  // sup of the ungauged energy

  const GaugeSearchResult res = gauge_upper_bound(m);
  CHECK(res.value < 0.1);
  CHECK(res.value >= 0.02 - 1e-9);  // never below max U
  CHECK(res.evaluations <= 400);

  const GaugeSearchResult again = gauge_upper_bound(m);
  CHECK(again.value == res.value);  // seeded search is deterministic
}

TEST_CASE("gauge value scales quadratically in the primitive") {
  const ManifoldModel m = gradient_theta_model();
  for (const double s : {0.25, 0.5, 0.75})
    CHECK(scaling_defect(m, s) < 1e-6);
}

TEST_CASE("stabilizer component is optimized away") {
  const ManifoldModel m = cos_potential(0.05);
  const GaugeSearchResult res = gauge_upper_bound(m, {}, true);
  CHECK(res.stabilizer == 0.0);
  CHECK(res.value == Catch::Approx(0.05).margin(1e-9));
}

TEST_CASE("no gauge bound without a bounded primitive") {
  CHECK_THROWS_AS(gauge_upper_bound(flat_magnetic(1.0)), ConfigError);
}
