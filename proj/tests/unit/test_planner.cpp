#include <cmath>

#include "doctest.h"
#include "troublemaker/planner.hpp"

using namespace troublemaker;
using doctest::Approx;

namespace {

ReferencePath straight(double length = 60.0) {
  return PathBuilder({{0.0, 0.0}, 0.0}, 3.5).line(length).build();
}

// Axis-aligned box given by its Frenet extents on the straight path above.
Footprint frenet_box(double s0, double s1, double l0, double l1) {
  return Footprint{{{s0, l0}, {s1, l0}, {s1, l1}, {s0, l1}}};
}

std::vector<FrenetState> constant_accel_states(int n, double dt, double v0, double a, double l = 0.0) {
  std::vector<FrenetState> xs;
  FrenetState x{5.0, v0, l, 0.0, 0.0};
  xs.push_back(x);
  for (int k = 0; k < n; ++k) {
    x = step_unclamped(x, {a, 0.0}, dt);
    xs.push_back(x);
  }
  return xs;
}

}  // namespace

TEST_CASE("empty corridor spans the lane") {
  const auto c = build_sl_corridor(straight(), {});
  c.validate();
  CHECK_FALSE(c.any_blocked());
  for (const auto& st : c.stations) {
    CHECK(st.l_min == -1.75);
    CHECK(st.l_max == 1.75);
  }
  CHECK(c.stations.front().s == 0.0);
  CHECK(c.stations.back().s == Approx(60.0));
}

TEST_CASE("left-half obstacle narrows the upper bound") {
  CorridorConfig cfg;
  const auto c = build_sl_corridor(straight(), {frenet_box(10.0, 15.0, 0.0, 1.75)}, cfg);
  c.validate();
  const double expected = 0.0 - 0.5 * cfg.ego.width;
  for (const auto& st : c.stations) {
    CHECK(st.l_min == -1.75);
    if (st.s >= 10.0 && st.s <= 15.0) {
      CHECK(st.l_max == Approx(expected));
    } else {
      CHECK(st.l_max == 1.75);
    }
  }
}

TEST_CASE("full-width obstacle blocks the corridor") {
  const auto c = build_sl_corridor(straight(), {frenet_box(20.0, 22.0, -2.0, 2.0)});
  CHECK(c.any_blocked());
  for (const auto& st : c.stations) CHECK(st.blocked == (st.s >= 20.0 && st.s <= 22.0));
  CHECK_FALSE(c.bounds_at(21.0).has_value());
  CHECK(c.bounds_at(30.0).has_value());
}

TEST_CASE("st graph from a crossing obstacle") {
  CHECK(build_st_graph(straight(), {}).blocked.empty());

  // overlaps the ego's lateral extent only while its centre passes l = 0
  CorridorConfig cfg;
  ObstaclePrediction pred;
  for (int k = 0; k <= 80; ++k) {
    const double t = 0.1 * k;
    const double lc = 12.0 - 3.0 * t;  // centre moves across the path
    pred.times.push_back(t);
    pred.footprints.push_back(frenet_box(20.0, 24.0, lc - 0.5, lc + 0.5));
  }
  const auto g = build_st_graph(straight(), {pred}, cfg);
  REQUIRE(g.blocked.size() == 1);
  const auto& r = g.blocked[0];
  // oracle: |lc| - 0.5 <= 0.775  <=>  t in [(12 - 1.275)/3, (12 + 1.275)/3]
  const double band = 0.5 * cfg.ego.width + 0.5;
  const double t_in = (12.0 - band) / 3.0, t_out = (12.0 + band) / 3.0;
  CHECK(r.t0 == Approx(std::ceil(t_in * 10.0 - 1e-9) / 10.0));
  CHECK(r.t1 == Approx(std::floor(t_out * 10.0 + 1e-9) / 10.0));
  CHECK(r.s0 == Approx(20.0 - 0.5 * cfg.ego.length));
  CHECK(r.s1 == Approx(24.0 - 0.25 + 0.5 * cfg.ego.length).epsilon(0.02));
  CHECK(g.occupied(4.0, 22.0));
  CHECK_FALSE(g.occupied(1.0, 22.0));

  ObstaclePrediction still;
  for (int k = 0; k <= 20; ++k) {
    still.times.push_back(0.1 * k);
    still.footprints.push_back(frenet_box(30.0, 34.0, -0.5, 0.5));
  }
  const auto gs = build_st_graph(straight(), {still}, cfg);
  REQUIRE(gs.blocked.size() == 1);
  CHECK(gs.blocked[0].t0 == 0.0);
  CHECK(gs.blocked[0].t1 == Approx(2.0));
}

TEST_CASE("feasible on-lattice game states are returned unchanged") {
  const auto game = constant_accel_states(10, 0.2, 3.0, 0.5);
  const auto c = build_sl_corridor(straight(), {});
  const auto best = sample_and_select(game, c, {});
  REQUIRE(best.trajectory.size() == game.size());
  CHECK(best.deviation_cost < 1e-20);
  for (std::size_t k = 0; k < game.size(); ++k) {
    CHECK(best.trajectory[k].s == Approx(game[k].s).epsilon(1e-12));
    CHECK(best.trajectory[k].s_dot == Approx(game[k].s_dot).epsilon(1e-12));
    CHECK(best.trajectory[k].l == 0.0);
  }
  CHECK(candidate_admissible(best, c, {}));
}

TEST_CASE("forced choice when a single candidate is feasible") {
  const auto game = constant_accel_states(10, 0.2, 3.0, 0.0);
  // only the end of the horizon is narrowed: l >= 0.4 there
  const double s_end = game.back().s;
  SlCorridor c;
  for (double s = 0.0; s < s_end - 0.2; s += 0.5) c.stations.push_back({s, -1.75, 1.75, false});
  c.stations.push_back({s_end - 0.05, 0.4, 1.75, false});
  c.stations.push_back({s_end + 5.0, 0.4, 1.75, false});
  LatticeConfig cfg;
  // lateral offsets below 0.4 fail at the horizon end
  cfg.lateral_offsets = {-0.5, 0.0, 0.5};
  cfg.speed_offsets = {0.0};
  const auto best = sample_and_select(game, c, {}, cfg);
  CHECK(best.trajectory.back().l == Approx(0.5));
  CHECK(best.trajectory.back().s_dot == Approx(3.0));

  cfg.lateral_offsets = {-0.5, 0.0, 0.25};
  CHECK_THROWS_AS(sample_and_select(game, c, {}, cfg), PlanningError);
}

TEST_CASE("mirrored tie resolves to the smaller mean |l|") {
  const auto game = constant_accel_states(3, 0.2, 3.0, 0.0, 0.3);
  LatticeConfig cfg;
  cfg.lateral_offsets = {0.25, -0.25};  // the smaller-|l| option has the larger index
  cfg.speed_offsets = {0.0};
  cfg.lateral_accel_limit = 100.0;
  const auto best = sample_and_select(game, build_sl_corridor(straight(), {}), {}, cfg);
  CHECK(best.trajectory.back().l == Approx(0.05));
  CHECK(best.trajectory[1].l < 0.3);
}

TEST_CASE("selection respects obstacles") {
  const auto game = constant_accel_states(10, 0.2, 3.0, 0.0);
  CorridorConfig cc;
  const auto corridor = build_sl_corridor(straight(), {frenet_box(10.0, 14.0, -2.5, -0.55)}, cc);
  const auto best = sample_and_select(game, corridor, {});
  CHECK(candidate_admissible(best, corridor, {}));
  for (const auto& x : best.trajectory.states()) {
    if (x.s >= 10.0 && x.s <= 14.0) CHECK(x.l >= 0.225 - 1e-9);
  }
  // finite-differenced actions stay inside the longitudinal bounds
  for (const auto& a : best.actions) {
    CHECK(a.s_ddot >= -4.0 - 1e-9);
    CHECK(a.s_ddot <= 2.5 + 1e-9);
  }
}

TEST_CASE("tracker equilibrium and first-step P term") {
  const auto path = straight();
  const auto ref = Trajectory(constant_accel_states(10, 0.2, 3.0, 0.0), 0.2);
  auto plant = plant_from_frenet(ref[0], path);
  const auto [next, cmd] = track_step(plant, ref, path, 0.0, 0.05);
  CHECK(cmd.accel == Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(cmd.steer) < 1e-12);

  plant.v = 1.0;  // 2 m/s below a constant-speed target
  TrackerGains g;
  const auto [n2, c2] = track_step(plant, ref, path, 0.0, 0.05, g);
  CHECK(c2.accel == Approx(std::clamp(g.kp * 2.0, g.a_min, g.a_max)));
  plant.v = 6.0;
  const auto [n3, c3] = track_step(plant, ref, path, 0.0, 0.05, g);
  CHECK(c3.accel == Approx(-3.6));
  plant.v = 0.0;
  PlantState slow = plant;
  const auto ref_fast = Trajectory(constant_accel_states(10, 0.2, 8.0, 0.0), 0.2);
  const auto [n4, c4] = track_step(slow, ref_fast, path, 0.0, 0.05, g);
  CHECK(c4.accel == g.a_max);
  CHECK(c4.accel_saturated);
}

TEST_CASE("steering opposes a lateral offset") {
  const auto path = straight();
  const auto ref = Trajectory(constant_accel_states(10, 0.2, 3.0, 0.0), 0.2);
  auto plant = plant_from_frenet(ref[0], path);
  plant.pose.position.y = 0.5;
  CHECK(track_step(plant, ref, path, 0.0, 0.05).second.steer < 0.0);
  plant.pose.position.y = -0.5;
  CHECK(track_step(plant, ref, path, 0.0, 0.05).second.steer > 0.0);
}

TEST_CASE("cross-track error converges from a 0.5 m offset") {
  const auto path = straight(200.0);
  std::vector<FrenetState> xs;
  for (int k = 0; k <= 60; ++k) xs.push_back({5.0 + 3.0 * 0.2 * k, 3.0, 0.0, 0.0, 0.2 * k});
  const Trajectory ref(xs, 0.2);
  auto plant = plant_from_frenet(xs[0], path);
  plant.pose.position.y = 0.5;
  double t = 0.0;
  double err = 1.0;
  while (t < 8.0 - 1e-9) {
    auto [next, cmd] = track_step(plant, ref, path, t, 0.05);
    plant = next;
    t += 0.05;
    err = std::abs(plant_to_frenet(plant, path, t).l);
  }
  CHECK(err < 0.05);
}

TEST_CASE("plant replay is deterministic and frenet conversion round trips") {
  PlantState p;
  p.v = 2.0;
  PlantState q = p;
  for (int k = 0; k < 100; ++k) {
    p = bicycle_step(p, 0.3 * std::sin(0.1 * k), 0.2 * std::cos(0.05 * k), 0.05);
    q = bicycle_step(q, 0.3 * std::sin(0.1 * k), 0.2 * std::cos(0.05 * k), 0.05);
  }
  CHECK(p.pose.position.x == q.pose.position.x);
  CHECK(p.pose.heading == q.pose.heading);

  const auto path = PathBuilder({{1.75, -40.0}, M_PI / 2}, 3.5).line(34.0).arc(10.0, M_PI / 2).line(30.0).build();
  const FrenetState x{40.0, 3.0, 0.2, 0.0, 1.0};
  const auto back = plant_to_frenet(plant_from_frenet(x, path), path, 1.0);
  CHECK(back.s == Approx(40.0));
  CHECK(back.l == Approx(0.2));
  CHECK(back.s_dot == Approx(3.0));

  // braking to a stop inside a step never reverses
  PlantState b;
  b.v = 0.1;
  b = bicycle_step(b, -4.0, 0.0, 0.05);
  CHECK(b.v == 0.0);
  CHECK(b.pose.position.x == Approx(0.1 * 0.1 / 8.0));
}

TEST_CASE("reference sampling") {
  const auto game = constant_accel_states(4, 0.2, 2.0, 1.0);
  const Trajectory ref(game, 0.2);
  const auto mid = sample_trajectory(ref, 0.3);
  CHECK(mid.state.s_dot == Approx(2.3));
  CHECK(mid.state.s == Approx(5.0 + 2.0 * 0.3 + 0.5 * 0.09));
  CHECK(mid.action.s_ddot == Approx(1.0));
  const auto past = sample_trajectory(ref, 1.0);
  CHECK(past.action.s_ddot == 0.0);
  CHECK(past.state.s_dot == Approx(2.8));
}
