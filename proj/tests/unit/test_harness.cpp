#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "troublemaker/errors.hpp"
#include "troublemaker/exposure.hpp"
#include "troublemaker/harness.hpp"

using namespace troublemaker;

namespace {

TrialRecord with_min_pet(double v, bool valid = true) {
  TrialRecord r;
  r.min_pet = v;
  r.valid = valid;
  return r;
}

}  // namespace

TEST_CASE("hausdorff distance on small sets") {
  CHECK(hausdorff_distance({{0, 0}}, {{5, 0}}) == doctest::Approx(5.0));
  CHECK(hausdorff_distance({{0, 0}, {1, 0}}, {{0, 0}, {3, 0}}) == doctest::Approx(2.0));
  CHECK(hausdorff_distance({{0, 0}, {3, 4}}, {{0, 0}, {3, 4}}) == 0.0);
  // directed distances differ; the metric takes the larger
  CHECK(hausdorff_distance({{0, 0}}, {{0, 0}, {0, 7}}) == doctest::Approx(7.0));
  CHECK_THROWS_AS(hausdorff_distance({}, {{0, 0}}), DegenerateDataError);
}

TEST_CASE("mean min-PET error and severe rate") {
  CHECK(mean_min_pet_error({with_min_pet(1.0), with_min_pet(2.0)}, {1.5, 2.5}) == doctest::Approx(0.5));
  // targets enter as magnitudes
  CHECK(mean_min_pet_error({with_min_pet(1.0), with_min_pet(2.0)}, {-1.5, 2.5}) == doctest::Approx(0.5));
  // invalid trials are skipped
  CHECK(mean_min_pet_error({with_min_pet(1.0), with_min_pet(9.0, false)}, {1.25, 0.0}) == doctest::Approx(0.25));
  CHECK_THROWS_AS(mean_min_pet_error({with_min_pet(1.0, false)}, {1.0}), DegenerateDataError);
  CHECK_THROWS_AS(mean_min_pet_error({with_min_pet(1.0)}, {1.0, 2.0}), InvalidStateError);

  std::vector<TrialRecord> rs;
  for (double v : {2.0, 2.4, 1.0, 3.0}) rs.push_back(with_min_pet(v));
  CHECK(severe_conflict_rate(rs) == doctest::Approx(0.5));
  CHECK_THROWS_AS(severe_conflict_rate({}), DegenerateDataError);
}

TEST_CASE("site geometry") {
  const Site site = build_site();
  CHECK(site.cp.position.x == doctest::Approx(-1.75).epsilon(1e-6));
  CHECK(site.cp.s_on_path_A > 34.0);
  CHECK(site.cp.s_on_path_A < 34.0 + 10.0 * M_PI / 2.0);
  CHECK(site.cp.s_on_path_B == doctest::Approx(60.0 - site.cp.position.y).epsilon(1e-9));
  SiteParams p;
  p.target_start = {50.0, 60.0};
  CHECK_THROWS_AS(build_site(p), ConfigError);
  p = {};
  p.lane_width = 0.0;
  CHECK_THROWS_AS(build_site(p), ConfigError);
}

TEST_CASE("baseline trigger window and plan") {
  const BaselineParams b;
  CHECK(baseline_trigger(5.0, b).launch);
  CHECK(baseline_trigger(4.5, b).launch);
  CHECK(baseline_trigger(5.5, b).launch);
  CHECK_FALSE(baseline_trigger(6.0, b).launch);
  CHECK_FALSE(baseline_trigger(4.4, b).launch);

  // already at speed: the plan holds 3 m/s throughout
  const auto plan = baseline_plan({10.0, 3.0, 0.0, 0.0, 2.0}, b, 25, 0.2);
  REQUIRE(plan.size() == 26);
  for (const auto& x : plan.states()) CHECK(x.s_dot == doctest::Approx(3.0));
  CHECK(plan.states().back().s == doctest::Approx(10.0 + 3.0 * 5.0));

  // from rest: ramp at the launch rate, then hold
  const auto ramp = baseline_plan({0.0, 0.0, 0.0, 0.0, 0.0}, b, 25, 0.2);
  CHECK(ramp.states()[1].s_dot == doctest::Approx(0.5));
  CHECK(ramp.states().back().s_dot == doctest::Approx(3.0));
}

TEST_CASE("time to point") {
  CHECK(time_to_point({10.0, 2.0, 0, 0, 0}, 20.0) == doctest::Approx(5.0));
  CHECK(std::isinf(time_to_point({25.0, 2.0, 0, 0, 0}, 20.0)));
  CHECK(std::isinf(time_to_point({10.0, 0.0, 0, 0, 0}, 20.0)));
}

TEST_CASE("scenario back-solve realizes the target signed PET unaccelerated") {
  const ScenarioDefaults d;
  for (double psi : {-2.0, 0.0, 2.0}) {
    const auto spec = make_scenario(psi, Method::kTroublemaker, d, 1, 0);
    REQUIRE(spec);
    const double t_v = (d.site.cp.s_on_path_A - spec->vut0.s) / spec->vut0.s_dot;
    const double t_t = (d.site.cp.s_on_path_B - spec->target0.s) / spec->target0.s_dot;
    CHECK(t_t - t_v == doctest::Approx(psi).epsilon(1e-9));
  }
  // a target that would have to start before its path does is unrealizable
  CHECK_FALSE(make_scenario(30.0, Method::kTroublemaker, d, 1, 0));

  // the baseline waits at one fixed place whatever psi* is
  const auto b1 = make_scenario(-2.0, Method::kBaseline, d, 1, 0);
  const auto b2 = make_scenario(3.0, Method::kBaseline, d, 1, 1);
  REQUIRE(b1);
  REQUIRE(b2);
  CHECK(b1->target0.s == b2->target0.s);
  CHECK(b1->target0.s_dot == 0.0);
  CHECK(b2->psi_target == 3.0);
}

TEST_CASE("draw_scenarios rejects unrealizable draws") {
  const ScenarioDefaults d;
  // every draw from U(20, 40) s is too late for the site
  ProposalDistribution far = parse_proposal("uniform:20,40");
  CHECK_THROWS_AS(draw_scenarios(far, 3, 1, d, {Method::kTroublemaker}, 50), DegenerateDataError);

  const auto q = parse_proposal("gaussian:0,1.5");
  const auto a = draw_scenarios(q, 20, 9, d, {Method::kBaseline, Method::kTroublemaker});
  const auto b = draw_scenarios(q, 20, 9, d, {Method::kBaseline, Method::kTroublemaker});
  CHECK(a.psi.size() == 20);
  CHECK(a.psi == b.psi);
  CHECK(a.rejected == b.rejected);

  const auto mixed = draw_scenarios(parse_proposal("uniform:-2,28"), 20, 3, d, {Method::kTroublemaker});
  CHECK(mixed.rejected > 0);
  for (double psi : mixed.psi) CHECK(make_scenario(psi, Method::kTroublemaker, d, 3, 0));
}

namespace {

ScenarioSpec quick_spec(double psi, Method m) {
  ScenarioDefaults d;
  d.trial.max_duration_s = 30.0;
  auto s = make_scenario(psi, m, d, 11, 0);
  REQUIRE(s);
  return *s;
}

bool same_rows(const TrialRecord& a, const TrialRecord& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& x = a.rows[i];
    const auto& y = b.rows[i];
    if (x.t != y.t || x.actor != y.actor || x.x.s != y.x.s || x.x.s_dot != y.x.s_dot || x.x.l != y.x.l ||
        x.position.x != y.position.x || x.position.y != y.position.y || x.v != y.v || x.accel_cmd != y.accel_cmd ||
        x.sigma != y.sigma || !(x.pet_rt == y.pet_rt || (std::isnan(x.pet_rt) && std::isnan(y.pet_rt))))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("trials replay identically and the ideal broker is transparent") {
  const auto spec = quick_spec(3.0, Method::kTroublemaker);
  const auto a = run_trial(spec);
  const auto b = run_trial(spec);
  REQUIRE(a.valid);
  CHECK(same_rows(a, b));
  CHECK(a.min_pet == b.min_pet);

  auto direct = spec;
  direct.trial.use_broker = false;
  const auto c = run_trial(direct);
  CHECK(same_rows(a, c));
  CHECK(a.pet_series == c.pet_series);

  // both actors stream at 20 Hz: one VUT frame per 50 ms from t = 0
  std::size_t vut_frames = 0;
  double last_ms = 0.0;
  for (const auto& e : a.link_log) {
    if (e.kind == LinkEventKind::kPublish && e.topic == kVutStateTopic) {
      ++vut_frames;
      last_ms = e.publish_ms;
    }
  }
  CHECK(vut_frames == static_cast<std::size_t>(std::lround(last_ms / 50.0)) + 1);
  CHECK(a.telemetry_frames == 2 * vut_frames);
  // trial log rows: one per actor per control step
  CHECK(a.rows.size() == 2 * a.target_speeds.size());

  // min PET is the minimum of the recorded series
  REQUIRE_FALSE(a.pet_series.empty());
  CHECK(a.min_pet == *std::min_element(a.pet_series.begin(), a.pet_series.end()));
}

TEST_CASE("baseline with the VUT out of the way never triggers") {
  auto spec = quick_spec(2.0, Method::kBaseline);
  spec.vut0.s = spec.site.cp.s_on_path_A + 10.0;
  spec.trial.max_duration_s = 8.0;
  const auto r = run_trial(spec);
  CHECK(r.valid);
  CHECK_FALSE(r.trigger_time);
  CHECK_FALSE(r.conflict);
  CHECK(std::isinf(r.min_pet));
  CHECK(r.end_reason == "timeout");
}

TEST_CASE("mutual yielding ends at the deadlock cutoff") {
  auto spec = quick_spec(1.0, Method::kTroublemaker);
  spec.vut.kind = VutPolicyKind::kConservativeYield;
  spec.game.allow_rush = false;
  spec.trial.max_duration_s = 40.0;
  const auto r = run_trial(spec);
  CHECK(r.game_termination == "deadlock-cutoff");
  CHECK(r.game_elapsed == doctest::Approx(spec.game.delta_max));
}

TEST_CASE("hausdorff is a metric on samples") {
  const std::vector<Point2> a{{0, 0}, {1, 1}, {2, 0}}, b{{0, 1}, {3, 0}}, c{{5, 5}};
  CHECK(hausdorff_distance(a, b) == hausdorff_distance(b, a));
  CHECK(hausdorff_distance(a, c) <= hausdorff_distance(a, b) + hausdorff_distance(b, c) + 1e-12);
  CHECK(hausdorff_distance(a, a) == 0.0);
}

TEST_CASE("batches are order-independent and cap replacements") {
  std::vector<ScenarioSpec> specs;
  for (int i = 0; i < 3; ++i) {
    auto s = quick_spec(2.0 + i, Method::kBaseline);
    s.index = static_cast<std::size_t>(i);
    specs.push_back(s);
  }
  const auto one = run_batch(specs, 1);
  const auto many = run_batch(specs, 8);
  CHECK(format_report(one.report) == format_report(many.report));
  const ArmReport* arm = one.report.arm(Method::kBaseline);
  REQUIRE(arm);
  CHECK(arm->valid == 3);
  // identical baseline runs: every speed curve is the same
  CHECK(arm->hausdorff_mean == 0.0);

  auto reversed = specs;
  std::reverse(reversed.begin(), reversed.end());
  const auto rev = run_batch(reversed, 2);
  CHECK(rev.report.arm(Method::kBaseline)->mean_min_pet_error == doctest::Approx(arm->mean_min_pet_error));

  // an infeasible game step invalidates this one; replacements fail too
  auto bad = quick_spec(-1.0, Method::kTroublemaker);
  REQUIRE_FALSE(run_trial(bad).valid);
  std::size_t asked = 0;
  const auto capped = run_batch({bad}, 1, [&](Method m, std::size_t k) -> std::optional<ScenarioSpec> {
    ++asked;
    auto r = bad;
    r.index = 100 + k;
    (void)m;
    return r;
  }, 2);
  CHECK(asked == 2);
  const ArmReport* tm = capped.report.arm(Method::kTroublemaker);
  REQUIRE(tm);
  CHECK(tm->partial);
  CHECK(tm->valid == 0);
  CHECK(tm->replacements == 2);
  CHECK(capped.records.size() == 3);
}
