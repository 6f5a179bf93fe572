#pragma once

// Closed-loop trials on the unprotected left-turn site and the evaluation
// metrics for the baseline (fixed trigger) and troublemaker (game) methods.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "troublemaker/cloudlink.hpp"
#include "troublemaker/exposure.hpp"
#include "troublemaker/game.hpp"
#include "troublemaker/kinematics.hpp"
#include "troublemaker/planner.hpp"
#include "troublemaker/risk.hpp"

namespace troublemaker {

// VUT: straight approach, left turn, straight exit. Target: straight through,
// opposing direction.
struct SiteParams {
  double lane_width = 3.5;
  Point2 vut_start{1.75, -40.0};
  double vut_heading_deg = 90.0;
  double vut_approach_m = 34.0;
  double vut_turn_radius_m = 10.0;
  double vut_turn_deg = 90.0;
  double vut_exit_m = 30.0;
  Point2 target_start{-1.75, 60.0};
  double target_heading_deg = -90.0;
  double target_length_m = 120.0;
  VehicleShape vut_shape{4.76, 1.85};
  VehicleShape target_shape{3.65, 1.55};

  void validate() const;  // throws ConfigError
};

struct Site {
  SiteParams params;
  ReferencePath vut_path;
  ReferencePath target_path;
  ConflictPoint cp;  // path A = VUT, path B = target
};

Site build_site(const SiteParams& params = {});

enum class Method { kBaseline, kTroublemaker };
std::string to_string(Method m);
Method parse_method(const std::string& text);  // throws ConfigError

enum class VutPolicyKind { kFollowerOcp, kConstantSpeed, kConservativeYield };
std::string to_string(VutPolicyKind k);
VutPolicyKind parse_vut_policy(const std::string& text);

struct VutPolicyConfig {
  VutPolicyKind kind = VutPolicyKind::kFollowerOcp;
  // Side switches only when the predicted arrival order flips by this margin.
  double side_hysteresis_s = 0.3;
  // conservative-yield: stop before the conflict point while the target is
  // predicted to reach it within this time.
  double yield_horizon_s = 6.0;
  double yield_distance_m = 12.0;  // or while it is this close to it
  double stop_margin_m = 6.0;
  double speed_gain = 0.8;  // 1/s, speed tracking for the simple policies
};

// Fixed site setup: the target waits where a launch at the upper window edge
// meets a nominal VUT at design_pet_s. The trial's psi* is only scored.
struct BaselineParams {
  double window_lo_s = 4.5;
  double window_hi_s = 5.5;
  double speed = 3.0;
  double launch_accel = 2.5;
  double design_pet_s = 0.0;
  // Closest a resting target may wait before its conflict point.
  double min_standoff_m = 8.0;
};

struct TrialParams {
  int tick_ms = 50;
  int control_ticks = 4;            // control step = tick * control_ticks
  double vut_speed = 4.0;           // initial and reference speed, m/s
  double target_speed = 3.0;        // nominal target speed, m/s
  double activation_ttc_s = 6.0;    // game starts when the VUT is this close in time
  double hazard_curvature = 1.0;    // m * n, sets the width of the hazard parabola
  double pet_speed_floor = 0.1;
  double exit_margin_m = 8.0;
  double max_duration_s = 40.0;
  double hausdorff_window_s = 24.0;
  double hausdorff_time_scale_s = 10.0;
  double hausdorff_speed_scale_mps = 1.0;
  bool use_broker = true;           // false: DirectTransport
  // Any solver step that needed separation slack invalidates the trial.
  bool infeasible_invalidates = true;
  // No admissible lattice candidate: brake at a_min (false: invalidate).
  bool brake_on_planner_fault = true;

  void validate() const;
};

struct ScenarioDefaults {
  Site site = build_site();
  TrialParams trial;
  BaselineParams baseline;
  RiskParams risk;
  GameConfig game;
  LinkConfig link;
  VutPolicyConfig vut;
  LatticeConfig lattice;
  TrackerGains gains;
};

struct ScenarioSpec {
  Site site;
  FrenetState vut0;
  FrenetState target0;
  double psi_target = 0.0;  // signed PET, VUT as first actor
  Method method = Method::kTroublemaker;
  RiskParams risk;
  GameConfig game;
  LinkConfig link;
  VutPolicyConfig vut;
  BaselineParams baseline;
  TrialParams trial;
  LatticeConfig lattice;
  TrackerGains gains;
  std::uint64_t seed = 0;
  std::size_t index = 0;

  void validate() const;
};

// Initial states for a target signed PET; nullopt when the site cannot host it.
std::optional<ScenarioSpec> make_scenario(double psi_target, Method method, const ScenarioDefaults& defaults,
                                          std::uint64_t seed, std::size_t index);

struct ScenarioDraws {
  std::vector<double> psi;
  std::size_t rejected = 0;
};

// Draws psi* from q until n values are realizable for every listed method.
ScenarioDraws draw_scenarios(const ProposalDistribution& q, std::size_t n, std::uint64_t seed,
                             const ScenarioDefaults& defaults, const std::vector<Method>& methods,
                             std::size_t max_rejections = 100000);

// Constant-velocity time to reach s_cp; +inf when (nearly) stopped or past it.
double time_to_point(const FrenetState& x, double s_cp, double speed_floor = 1e-3);

struct BaselineDecision {
  bool launch = false;
  double predicted_ttc = 0.0;
};

BaselineDecision baseline_trigger(double predicted_vut_ttc, const BaselineParams& params);
// Ramp at launch_accel to the baseline speed, then hold it.
Trajectory baseline_plan(const FrenetState& target, const BaselineParams& params, int steps, double dt);

struct TrialRow {
  double t = 0.0;
  std::string actor;
  FrenetState x;
  Point2 position;
  double v = 0.0;
  double accel_cmd = 0.0;
  double pet_rt = 0.0;
  std::string sigma = "-";
};

struct TrialRecord {
  std::size_t index = 0;
  Method method = Method::kTroublemaker;
  double psi_target = 0.0;
  std::uint64_t seed = 0;
  bool valid = true;
  std::string invalid_reason;
  std::vector<TrialRow> rows;
  // Real-time PET from the first crossing of the conflict point until the
  // second (PET is undefined before encroachment).
  std::vector<double> pet_times;
  std::vector<double> pet_series;
  bool conflict = false;  // some actor crossed
  double min_pet = 0.0;   // +inf without a conflict
  std::optional<double> realized_signed_pet;  // t_target - t_vut at the conflict point
  std::optional<double> vut_cross_time;
  std::optional<double> target_cross_time;
  std::string game_termination = "none";
  double game_elapsed = 0.0;
  int game_steps = 0;
  int infeasible_steps = 0;
  int planner_fallbacks = 0;  // control steps spent braking for lack of a candidate
  std::string end_reason;
  std::optional<double> trigger_time;
  bool collision = false;  // footprints overlapped at some tick
  std::optional<double> collision_time;
  double max_jerk = 0.0;
  std::vector<double> target_speed_times;
  std::vector<double> target_speeds;
  std::vector<LinkEvent> link_log;
  std::size_t telemetry_frames = 0;
};

TrialRecord run_trial(const ScenarioSpec& spec);

void write_trial_log(const std::filesystem::path& path, const TrialRecord& rec);
std::vector<TrialRow> read_trial_log(const std::filesystem::path& path);  // throws ParseError

// Drawn scenario targets with their importance weights p/q.
struct ScenarioSet {
  std::uint64_t seed = 0;
  std::string proposal;
  std::size_t rejected = 0;
  std::vector<double> psi;
  std::vector<double> weight;
};

void write_scenarios(const std::filesystem::path& path, const ScenarioSet& set);
ScenarioSet read_scenarios(const std::filesystem::path& path);  // throws ParseError

// Metrics ---------------------------------------------------------------

double mean_min_pet_error(const std::vector<TrialRecord>& records, const std::vector<double>& targets);

// Planar point sets; Euclidean metric. Throws on empty input.
double hausdorff_distance(const std::vector<Point2>& a, const std::vector<Point2>& b);

// Target speed curve on the fixed window as scaled (t, v) points, the last
// sample held after the trial ended.
std::vector<Point2> speed_curve(const TrialRecord& rec, const TrialParams& params);

double severe_conflict_rate(const std::vector<TrialRecord>& records, double threshold = 2.3);

struct ArmReport {
  Method method = Method::kTroublemaker;
  std::size_t requested = 0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
  std::size_t replacements = 0;
  bool partial = false;
  double mean_min_pet_error = 0.0;
  double severe_conflict_rate = 0.0;
  double hausdorff_mean = 0.0;
  double hausdorff_max = 0.0;
  double jerk_mean = 0.0;
  double jerk_max = 0.0;
  std::vector<std::vector<double>> hausdorff;  // pairwise over valid trials
};

struct MetricsReport {
  std::vector<ArmReport> arms;
  const ArmReport* arm(Method m) const;
};

ArmReport summarize_arm(Method m, const std::vector<TrialRecord>& valid_records, const TrialParams& params);

// Supplies the k-th replacement scenario for an arm, or nullopt when none.
using ReplacementFn = std::function<std::optional<ScenarioSpec>(Method, std::size_t)>;

struct BatchResult {
  std::vector<TrialRecord> records;  // request order, replacements appended per arm
  MetricsReport report;
};

// Runs specs on `parallelism` workers. Invalid trials are replaced (at most
// `replacement_cap` per arm) until each arm has as many valid trials as it
// was given specs.
BatchResult run_batch(const std::vector<ScenarioSpec>& specs, unsigned parallelism,
                      const ReplacementFn& replacement = {}, std::size_t replacement_cap = 0);

std::string format_report(const MetricsReport& report);
void write_report(const std::filesystem::path& path, const MetricsReport& report);
// Reads what format_report wrote (the pairwise matrix is not stored).
MetricsReport parse_report(const std::string& text);  // throws ParseError
MetricsReport read_report(const std::filesystem::path& path);
void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialRecord>& records);

}  // namespace troublemaker
