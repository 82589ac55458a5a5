#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cisrl/dynamics.hpp"
#include "reference_integrator.hpp"

using namespace cisrl;

namespace {

// Independent oracle: the two balance equations written out literally.
Eigen::Vector2d rhs_oracle(double c_a, double temp, double t_c,
                           const CstrParams& p) {
  const double k = p.k0 * std::exp(-p.e_over_r / temp);
  const double dca = (p.flow / p.volume) * (p.c_af - c_a) - k * c_a;
  const double dtemp = (p.flow / p.volume) * (p.t_f - temp) +
                       (p.neg_dh / (p.rho * p.c_p)) * k * c_a +
                       (p.ua / (p.volume * p.rho * p.c_p)) * (t_c - temp);
  return {dca, dtemp};
}

}  // namespace

TEST_CASE("rhs matches the hand-evaluated balance equations") {
  const CstrParams p;

  SUBCASE("near-equilibrium point, (E/R)/T = 25 exactly") {
    const Eigen::Vector2d got = rhs({0.5, 350.0}, {300.0}, p);
    const Eigen::Vector2d want = rhs_oracle(0.5, 350.0, 300.0, p);
    CHECK(got[0] == doctest::Approx(want[0]).epsilon(1e-14));
    CHECK(got[1] == doctest::Approx(want[1]).epsilon(1e-14));
    // two-significant-figure values at their printed precision
    CHECK(std::abs(got[0] - 3.40e-5) < 0.005e-5);
    CHECK(std::abs(got[1] - (-7.1e-3)) < 0.05e-3);
  }

  SUBCASE("feed concentration, dilution term vanishes") {
    const Eigen::Vector2d got = rhs({1.0, 350.0}, {300.0}, p);
    const Eigen::Vector2d want = rhs_oracle(1.0, 350.0, 300.0, p);
    CHECK(got[0] == doctest::Approx(want[0]).epsilon(1e-14));
    CHECK(got[1] == doctest::Approx(want[1]).epsilon(1e-14));
    CHECK(got[0] == doctest::Approx(-0.99993).epsilon(1e-4));
    CHECK(got[1] == doctest::Approx(104.588).epsilon(1e-5));
  }

  SUBCASE("all driving terms vanish with k0 = 0, feed conditions, T_c = T") {
    CstrParams frozen = p;
    frozen.k0 = 0.0;
    const Eigen::Vector2d got =
        rhs({frozen.c_af, frozen.t_f}, {frozen.t_f}, frozen);
    CHECK(got[0] == 0.0);
    CHECK(got[1] == 0.0);
  }
}

TEST_CASE("rhs is pure: repeated calls are bit-identical") {
  const CstrParams p;
  const State x{0.731, 351.24};
  const Action u{297.5};
  const Eigen::Vector2d first = rhs(x, u, p);
  for (int i = 0; i < 10; ++i) {
    const Eigen::Vector2d again = rhs(x, u, p);
    CHECK(first[0] == again[0]);
    CHECK(first[1] == again[1]);
  }
}

TEST_CASE("step holds the zero-RHS equilibrium exactly") {
  CstrParams p;
  p.k0 = 0.0;
  const State x{p.c_af, p.t_f};
  const State next = step(x, {p.t_f}, p, {0.1, 10});
  CHECK(next.c_a == x.c_a);
  CHECK(next.temp == x.temp);
}

TEST_CASE("one short step stays near the slow point and tracks the oracle") {
  const CstrParams p;
  const IntegratorConfig cfg{0.1, 10};
  const State x0{0.5, 350.0};
  const Action u{300.0};
  const State got = step(x0, u, p, cfg);

  CHECK((got.vec() - x0.vec()).norm() < 1e-3);

  const Eigen::Vector2d ref =
      testing::integrate_reference(x0, u, p, cfg.dt);
  CHECK((got.vec() - ref).norm() < 1e-10);
}

TEST_CASE("substep composition is exact") {
  const CstrParams p;
  const State x0{0.62, 352.3};
  const Action u{291.0};
  const State whole = step(x0, u, p, {0.2, 8});
  const State half = step(step(x0, u, p, {0.1, 4}), u, p, {0.1, 4});
  CHECK(whole.c_a == half.c_a);
  CHECK(whole.temp == half.temp);
}

TEST_CASE("halving the internal step shrinks the error by about 2^4") {
  const CstrParams p;
  const State x0{0.45, 351.0};  // cooling transient, stays well-conditioned
  const Action u{295.0};
  const double t_end = 1.0;

  const Eigen::Vector2d ref = testing::integrate_reference(x0, u, p, t_end);
  const double err_h =
      (step(x0, u, p, {t_end, 10}).vec() - ref).norm();
  const double err_half =
      (step(x0, u, p, {t_end, 20}).vec() - ref).norm();
  REQUIRE(err_half > 0.0);
  const double ratio = err_h / err_half;
  CAPTURE(err_h);
  CAPTURE(err_half);
  CAPTURE(ratio);
  CHECK(std::log2(ratio) > 3.0);
  CHECK(std::log2(ratio) < 5.0);
}

TEST_CASE("step is continuous in the state") {
  const CstrParams p;
  const IntegratorConfig cfg{0.1, 10};
  const Action u{300.0};
  const double delta = 1e-6;
  for (const State& x : {State{0.45, 347.0}, State{0.5, 350.0},
                         State{0.55, 353.5}}) {
    const Eigen::Vector2d base = step(x, u, p, cfg).vec();
    for (int axis = 0; axis < 2; ++axis) {
      State bumped = x;
      (axis == 0 ? bumped.c_a : bumped.temp) += delta;
      const Eigen::Vector2d moved = step(bumped, u, p, cfg).vec();
      CHECK((moved - base).norm() / delta < 100.0);
    }
  }
}

TEST_CASE("divergent integration is flagged, not clamped") {
  CstrParams p;
  p.k0 = 1e300;  // forces overflow inside the RK4 stages
  const State next = step({0.5, 350.0}, {300.0}, p, {0.1, 10});
  CHECK_FALSE(next.finite());
}

TEST_CASE("physical bounds are closed intervals") {
  CHECK(in_physical_bounds({0.5, 350.0}));
  CHECK_FALSE(in_physical_bounds({-0.1, 350.0}));
  CHECK(in_physical_bounds({0.5, 355.0}));
  CHECK(in_physical_bounds({0.0, 345.0}));
  CHECK(in_physical_bounds({1.0, 355.0}));
  CHECK_FALSE(in_physical_bounds({1.0000001, 350.0}));
  CHECK_FALSE(in_physical_bounds({0.5, 344.999}));
  CHECK_FALSE(in_physical_bounds(
      {std::numeric_limits<double>::quiet_NaN(), 350.0}));
}

TEST_CASE("action admissibility matches the coolant range") {
  CHECK(Action{285.0}.admissible());
  CHECK(Action{315.0}.admissible());
  CHECK_FALSE(Action{284.999}.admissible());
  CHECK_FALSE(Action{315.001}.admissible());
}
