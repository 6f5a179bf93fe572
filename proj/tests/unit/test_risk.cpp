#include <cmath>
#include <random>

#include "doctest.h"
#include "troublemaker/errors.hpp"
#include "troublemaker/risk.hpp"

using namespace troublemaker;
using doctest::Approx;

namespace {

Trajectory uniform(double s0, double v, int n, double dt, double t0 = 0.0) {
  std::vector<FrenetState> xs;
  for (int k = 0; k < n; ++k) xs.push_back({s0 + v * k * dt, v, 0.0, 0.0, t0 + k * dt});
  return Trajectory(xs, dt);
}

}  // namespace

TEST_CASE("pet and signed pet from crossing times") {
  // A reaches s=10 at t=5, B reaches s=14 at t=7.
  const auto a = uniform(0.0, 2.0, 20, 0.5);
  const auto b = uniform(0.0, 2.0, 20, 0.5);
  const ConflictPoint cp{{0, 0}, 10.0, 14.0};
  CHECK(*pet(a, b, cp) == Approx(2.0));
  const auto sp = *signed_pet(a, b, cp);
  CHECK(sp.indicator == 1);
  CHECK(sp.psi == Approx(2.0));
  CHECK(*pet(a, a, {{0, 0}, 10.0, 10.0}) == 0.0);

  const Trajectory stops({{0, 1, 0, 0, 0}, {0.5, 0, 0, 0, 0.5}}, 0.5);
  CHECK_FALSE(pet(a, stops, cp).has_value());

  const auto rev = *signed_pet(b, a, {{0, 0}, 14.0, 10.0});
  CHECK(rev.delta_t == Approx(-sp.delta_t));
}

TEST_CASE("signed pet hand values") {
  const auto a = signed_pet_from_times(5.0, 7.0);
  CHECK(a.pet == 2.0);
  CHECK(a.indicator == 1);
  CHECK(a.psi == 2.0);
  const auto b = signed_pet_from_times(7.0, 5.5);
  CHECK(b.pet == 1.5);
  CHECK(b.indicator == -1);
  CHECK(b.psi == -1.5);
  const auto c = signed_pet_from_times(3.0, 3.0);
  CHECK(c.indicator == 1);
  CHECK(c.psi == 0.0);
}

TEST_CASE("hazard pet is unsigned") {
  CHECK(hazard_pet(signed_pet_from_times(0, 2)) == 2.0);
  CHECK(hazard_pet(signed_pet_from_times(1.5, 0)) == 1.5);
  CHECK(hazard_pet(signed_pet_from_times(1, 1)) == 0.0);
}

TEST_CASE("hazard quadratic hand values") {
  RiskParams p;
  CHECK(hazard_quadratic(0.0, p, unit_density) == Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(hazard_quadratic(2.3, p, unit_density) - 2.0) < 1e-12);
  p.m = 2.0;
  p.n = 3.0;
  CHECK(std::abs(hazard_quadratic(1.0, p, unit_density) - 1.0) < 1e-12);
  CHECK(hazard_quadratic(0.0, p, unit_density) == 1.0);
  CHECK(hazard_quadratic(1.0, p, [](double) { return 0.5; }) == 0.5);
  CHECK_THROWS_AS(hazard_quadratic(1.0, p, [](double) { return NAN; }), InvalidStateError);
}

TEST_CASE("root form vanishes at -m and n") {
  RiskParams p;
  p.m = 1.5;
  p.n = 2.5;
  p.hazard_form = HazardForm::kRootForm;
  CHECK(std::abs(hazard_quadratic(-1.5, p, unit_density)) < 1e-12);
  CHECK(std::abs(hazard_quadratic(2.5, p, unit_density)) < 1e-12);
}

TEST_CASE("hazard parabola vertex and symmetry") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.5, 4.0);
  for (int trial = 0; trial < 20; ++trial) {
    RiskParams p;
    p.m = U(rng);
    p.n = U(rng);
    const double vertex = (p.n - p.m) / 2.0;
    double best = 1e300, arg = 0.0;
    for (int i = 0; i <= 200000; ++i) {
      const double psi = -10.0 + 20.0 * i / 200000.0;
      const double h = hazard_quadratic(psi, p, unit_density);
      if (h < best) best = h, arg = psi;
    }
    CHECK(std::abs(arg - vertex) <= 1e-4);
    const double expected_min = 1.0 - (p.m - p.n) * (p.m - p.n) / (4.0 * p.m * p.n);
    CHECK(hazard_quadratic(vertex, p, unit_density) == Approx(expected_min).epsilon(1e-12));
  }
  RiskParams sym;
  for (double psi : {0.3, 1.0, 2.7}) {
    CHECK(hazard_quadratic(psi, sym, unit_density) == hazard_quadratic(-psi, sym, unit_density));
  }
}

TEST_CASE("smoothness cost") {
  CHECK(smoothness_cost(std::vector<ControlAction>(3)) == 0.0);
  CHECK(smoothness_cost(std::vector<ControlAction>{{1, 1}, {1, 1}}) == 4.0);
  CHECK(smoothness_cost(std::vector<ControlAction>{{1.7, 0}}) == Approx(1.7 * 1.7).epsilon(1e-15));
}

TEST_CASE("compliance cost") {
  const std::array<double, 4> Q{1, 20, 1, 5};
  const Trajectory ref({{0, 3, 0, 0, 0}}, 0.1);
  CHECK(compliance_cost(ref, ref, Q) == 0.0);
  CHECK(compliance_cost(Trajectory({{0, 3, 1, 0, 0}}, 0.1), ref, Q) == 1.0);
  CHECK(compliance_cost(Trajectory({{0, 4, 0, 0, 0}}, 0.1), ref, Q) == 20.0);
  const auto a = uniform(0, 3, 5, 0.1), b = uniform(0.5, 3.2, 5, 0.1);
  CHECK(compliance_cost(a.shifted(4.0), b.shifted(4.0), Q) == compliance_cost(a, b, Q));
  CHECK_THROWS_AS(compliance_cost(a, uniform(0, 3, 4, 0.1), Q), InvalidStateError);
  CHECK_THROWS_AS(compliance_cost(a, uniform(0, 3, 5, 0.2), Q), InvalidStateError);
}

TEST_CASE("total utility and weights") {
  RiskParams p;
  CHECK(total_utility(1, 1, 1, p) == Approx(1.0).epsilon(1e-12));
  CHECK(total_utility(0, 0, 0, p) == 0.0);
  RiskParams only_h;
  only_h.omega_h = 1.0;
  only_h.omega_s = 0.0;
  only_h.omega_c = 0.0;
  CHECK(total_utility(3.5, 9, 9, only_h) == 3.5);
  CHECK(total_utility(2, 1, 1, p) >= total_utility(1, 1, 1, p));
  p.omega_h = 0.8;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  RiskParams neg;
  neg.m = -1;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("severe conflict threshold is strict") {
  RiskParams p;
  CHECK(is_severe_conflict(2.2, p));
  CHECK_FALSE(is_severe_conflict(2.3, p));
  CHECK_FALSE(is_severe_conflict(10.0, p));
}
