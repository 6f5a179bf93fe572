#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "troublemaker/config.hpp"
#include "troublemaker/errors.hpp"
#include "troublemaker/harness.hpp"

using namespace troublemaker;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "troublemaker_test_config";
  fs::create_directories(d);
  return d / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::size_t error_line(const std::string& text) {
  try {
    RunConfig cfg;
    apply_entries(cfg, parse_config_text(text));
  } catch (const ConfigError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_CASE("config text parsing") {
  auto es = parse_config_text("# comment\n[game]\nN = 12\n\n  dt=0.1   # trailing\n[run]\nseed = 7\n");
  REQUIRE(es.size() == 3);
  CHECK(es[0].section == "game");
  CHECK(es[0].key == "N");
  CHECK(es[0].value == "12");
  CHECK(es[0].line == 3);
  CHECK(es[1].value == "0.1");
  CHECK(es[2].line == 7);

  CHECK_THROWS_AS(parse_config_text("N = 1\n"), ConfigError);           // outside a section
  CHECK_THROWS_AS(parse_config_text("[game]\nN\n"), ConfigError);        // no '='
  CHECK_THROWS_AS(parse_config_text("[game\nN = 1\n"), ConfigError);     // bad header
  try {
    parse_config_text("[game]\nN = 1\ndt = 0.2\nN = 3\n");
    FAIL("duplicate accepted");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("unknown keys and bad values carry their line") {
  CHECK(error_line("[game]\nN = 10\n\nbogus = 1\n") == 4);
  CHECK(error_line("[nowhere]\nx = 1\n") == 2);
  CHECK(error_line("[game]\nN = ten\n") == 2);
  CHECK(error_line("[trial]\nuse_broker = maybe\n") == 2);
  CHECK(error_line("[risk]\nQ = 1,2,3\n") == 2);
  CHECK(error_line("[vut]\npolicy = reckless\n") == 2);
  CHECK(error_line("[run]\narms = baseline,nobody\n") == 2);
  CHECK(error_line("[game]\nN = 10\n") == 0);
}

TEST_CASE("values land in the right fields") {
  RunConfig cfg;
  apply_entries(cfg, parse_config_text("[game]\nN = 14\ns_safe = 5.5\nallow_rush = false\n"
                                       "[risk]\nQ = 2,3,4,5\n[run]\narms = troublemaker\nseed = 99\n"));
  CHECK(cfg.game.N == 14);
  CHECK(cfg.game.s_safe == 5.5);
  CHECK_FALSE(cfg.game.allow_rush);
  CHECK(cfg.risk.Q[3] == 5.0);
  REQUIRE(cfg.arms.size() == 1);
  CHECK(cfg.arms[0] == Method::kTroublemaker);
  CHECK(cfg.seed == 99);

  apply_override(cfg, "game.N=8");
  CHECK(cfg.game.N == 8);
  apply_override(cfg, "trial.vut_speed = 5");
  CHECK(cfg.trial.vut_speed == 5.0);
  CHECK_THROWS_AS(apply_override(cfg, "gameN=8"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "game.N"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "game.nope=1"), ConfigError);
}

TEST_CASE("formatted config loads back unchanged") {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.game.N = 9;
  cfg.game.tol = 1.0 / 3.0;
  cfg.trial.use_broker = false;
  cfg.arms = {Method::kBaseline};
  cfg.risk.hazard_form = HazardForm::kRootForm;
  fs::path p = scratch("round.cfg");
  write_text(p, format_run_config(cfg));
  RunConfig back = load_run_config(p);
  CHECK(format_run_config(back) == format_run_config(cfg));
  CHECK(back.game.tol == cfg.game.tol);
}

TEST_CASE("site file is applied first and resolved relative to the config") {
  fs::path site = scratch("narrow.cfg");
  write_text(site, "[site]\nlane_width = 3.0\n");
  fs::path main = scratch("main.cfg");
  write_text(main, "[run]\nsite = narrow.cfg\nseed = 3\n");
  RunConfig cfg = load_run_config(main);
  CHECK(cfg.site.lane_width == 3.0);
  CHECK(cfg.seed == 3);

  write_text(site, "[site]\nlane_width = 3.0\n[game]\nN = 4\n");
  CHECK_THROWS_AS(load_run_config(main), ConfigError);
  write_text(main, "[run]\nsite = missing.cfg\n");
  CHECK_THROWS_AS(load_run_config(main), ConfigError);
  CHECK_THROWS_AS(load_run_config(scratch("absent.cfg")), ConfigError);
}

TEST_CASE("every key has help and formats") {
  RunConfig cfg;
  for (const auto& k : config_keys()) {
    CHECK_FALSE(k.help.empty());
    std::string v = k.get(cfg);
    if (k.key != "site" && k.key != "data") {
      RunConfig c2;
      CHECK_NOTHROW(k.set(c2, v));
      CHECK(k.get(c2) == v);
    }
  }
  CHECK(describe_config_keys().find("[game] N") != std::string::npos);
}

TEST_CASE("scenario file round trip") {
  ScenarioSet s;
  s.seed = 11;
  s.proposal = "gaussian:0,1.5";
  s.rejected = 4;
  s.psi = {-2.5, 0.1, 1.0 / 3.0};
  s.weight = {1.0, 0.25, 2.0 / 3.0};
  fs::path p = scratch("s.tsv");
  write_scenarios(p, s);
  ScenarioSet b = read_scenarios(p);
  CHECK(b.seed == 11);
  CHECK(b.proposal == s.proposal);
  CHECK(b.rejected == 4);
  CHECK(b.psi == s.psi);
  CHECK(b.weight == s.weight);

  write_text(p, "index\tpsi_target_s\tweight\n0\tabc\t1\n");
  CHECK_THROWS_AS(read_scenarios(p), ParseError);
}

TEST_CASE("report text round trip") {
  MetricsReport r;
  ArmReport a;
  a.method = Method::kBaseline;
  a.requested = 30;
  a.valid = 28;
  a.invalid = 2;
  a.replacements = 2;
  a.mean_min_pet_error = 1.25;
  a.severe_conflict_rate = 0.5;
  a.hausdorff_mean = 0.125;
  a.hausdorff_max = 0.5;
  a.jerk_mean = 3.0;
  a.jerk_max = 4.0;
  r.arms.push_back(a);
  a.method = Method::kTroublemaker;
  a.partial = true;
  r.arms.push_back(a);
  std::string text = format_report(r);
  MetricsReport b = parse_report(text);
  CHECK(format_report(b) == text);
  REQUIRE(b.arm(Method::kTroublemaker) != nullptr);
  CHECK(b.arm(Method::kTroublemaker)->partial);
  CHECK(b.arm(Method::kBaseline)->valid == 28);
  CHECK_THROWS_AS(parse_report("[baseline]\ntrials_valid = x\n"), ParseError);
}

TEST_CASE("trial log reads back") {
  ScenarioDefaults d;
  auto spec = make_scenario(2.0, Method::kBaseline, d, 5, 0);
  REQUIRE(spec.has_value());
  spec->trial.max_duration_s = 4.0;
  TrialRecord rec = run_trial(*spec);
  fs::path p = scratch("trial.tsv");
  write_trial_log(p, rec);
  auto rows = read_trial_log(p);
  REQUIRE(rows.size() == rec.rows.size());
  REQUIRE_FALSE(rows.empty());
  CHECK(rows.back().actor == rec.rows.back().actor);
  CHECK(rows.back().t == doctest::Approx(rec.rows.back().t).epsilon(1e-9));
  CHECK(rows.back().v == doctest::Approx(rec.rows.back().v).epsilon(1e-6));
}
