#include "troublemaker/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <thread>

#include "troublemaker/errors.hpp"
#include "troublemaker/rng.hpp"
#include "troublemaker/textio.hpp"

namespace troublemaker {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double deg(double d) { return d * std::numbers::pi / 180.0; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void SiteParams::validate() const {
  require(lane_width > 0.0, "site: lane_width must be positive");
  require(vut_approach_m > 0.0 && vut_exit_m >= 0.0, "site: VUT approach must be positive, exit non-negative");
  require(vut_turn_radius_m > 0.0, "site: turn radius must be positive");
  require(std::abs(vut_turn_deg) > 0.0 && std::abs(vut_turn_deg) < 180.0, "site: turn angle must be in (0, 180) deg");
  require(target_length_m > 0.0, "site: target path length must be positive");
  require(vut_shape.length > 0.0 && vut_shape.width > 0.0, "site: VUT dimensions must be positive");
  require(target_shape.length > 0.0 && target_shape.width > 0.0, "site: target dimensions must be positive");
}

Site build_site(const SiteParams& params) {
  params.validate();
  Site site;
  site.params = params;
  site.vut_path = PathBuilder({params.vut_start, deg(params.vut_heading_deg)}, params.lane_width, "vut")
                      .line(params.vut_approach_m)
                      .arc(params.vut_turn_radius_m, deg(params.vut_turn_deg))
                      .line(params.vut_exit_m)
                      .build();
  site.target_path = PathBuilder({params.target_start, deg(params.target_heading_deg)}, params.lane_width, "target")
                         .line(params.target_length_m)
                         .build();
  const auto cp = find_conflict_point(site.vut_path, site.target_path);
  if (!cp) throw ConfigError("site: VUT and target paths do not cross");
  site.cp = *cp;
  return site;
}

std::string to_string(Method m) { return m == Method::kBaseline ? "baseline" : "troublemaker"; }

Method parse_method(const std::string& text) {
  if (text == "baseline") return Method::kBaseline;
  if (text == "troublemaker") return Method::kTroublemaker;
  throw ConfigError("unknown method '" + text + "' (baseline, troublemaker)");
}

std::string to_string(VutPolicyKind k) {
  switch (k) {
    case VutPolicyKind::kFollowerOcp: return "follower-ocp";
    case VutPolicyKind::kConstantSpeed: return "constant-speed";
    case VutPolicyKind::kConservativeYield: return "conservative-yield";
  }
  return "?";
}

VutPolicyKind parse_vut_policy(const std::string& text) {
  for (auto k : {VutPolicyKind::kFollowerOcp, VutPolicyKind::kConstantSpeed, VutPolicyKind::kConservativeYield}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown VUT policy '" + text + "' (follower-ocp, constant-speed, conservative-yield)");
}

void TrialParams::validate() const {
  require(tick_ms > 0 && control_ticks > 0, "trial: tick_ms and control_ticks must be positive");
  require(vut_speed > 0.0 && target_speed > 0.0, "trial: speeds must be positive");
  require(activation_ttc_s > 0.0, "trial: activation_ttc_s must be positive");
  require(hazard_curvature > 0.0, "trial: hazard_curvature must be positive");
  require(pet_speed_floor > 0.0, "trial: PET speed floor must be positive");
  require(exit_margin_m >= 0.0 && max_duration_s > 0.0, "trial: exit margin / duration out of range");
  require(hausdorff_window_s > 0.0 && hausdorff_time_scale_s > 0.0 && hausdorff_speed_scale_mps > 0.0,
          "trial: Hausdorff window and scales must be positive");
}

void ScenarioSpec::validate() const {
  trial.validate();
  game.validate();
  risk.validate(false);
  link.validate();
  require(std::abs(trial.tick_ms * trial.control_ticks - game.dt * 1000.0) < 1e-6,
          "trial: tick_ms * control_ticks must equal the game step dt");
  require(baseline.window_lo_s <= baseline.window_hi_s, "baseline: trigger window is empty");
  require(baseline.speed > 0.0 && baseline.launch_accel > 0.0, "baseline: speed and launch_accel must be positive");
  require(vut.side_hysteresis_s >= 0.0 && vut.speed_gain > 0.0, "vut: hysteresis / gain out of range");
}

std::optional<ScenarioSpec> make_scenario(double psi_target, Method method, const ScenarioDefaults& d,
                                          std::uint64_t seed, std::size_t index) {
  ScenarioSpec spec;
  spec.site = d.site;
  spec.psi_target = psi_target;
  spec.method = method;
  spec.risk = d.risk;
  spec.game = d.game;
  spec.link = d.link;
  spec.link.seed = derive_seed(seed ^ d.link.seed, "link", index);
  spec.vut = d.vut;
  spec.baseline = d.baseline;
  spec.trial = d.trial;
  spec.lattice = d.lattice;
  spec.gains = d.gains;
  spec.seed = seed;
  spec.index = index;

  const double s_cp_v = d.site.cp.s_on_path_A;
  const double s_cp_t = d.site.cp.s_on_path_B;
  spec.vut0 = {0.0, d.trial.vut_speed, 0.0, 0.0, 0.0};
  const double t_vut = s_cp_v / d.trial.vut_speed;

  double standoff = 0.0;
  if (method == Method::kTroublemaker) {
    standoff = d.trial.target_speed * (t_vut + psi_target);
    spec.target0 = {s_cp_t - standoff, d.trial.target_speed, 0.0, 0.0, 0.0};
    // Hazard vertex at the target, in game coordinates (target leads).
    const double v = -psi_target;
    const double root = std::sqrt(v * v + d.trial.hazard_curvature);
    spec.risk.m = root - v;
    spec.risk.n = root + v;
  } else {
    const auto& b = d.baseline;
    standoff = b.speed * (b.window_hi_s + b.design_pet_s) - b.speed * b.speed / (2.0 * b.launch_accel);
    spec.target0 = {s_cp_t - standoff, 0.0, 0.0, 0.0, 0.0};
  }
  if (!std::isfinite(standoff) || standoff < d.baseline.min_standoff_m || spec.target0.s < 0.0) return std::nullopt;
  return spec;
}

ScenarioDraws draw_scenarios(const ProposalDistribution& q, std::size_t n, std::uint64_t seed,
                             const ScenarioDefaults& defaults, const std::vector<Method>& methods,
                             std::size_t max_rejections) {
  q.validate();
  ScenarioDraws out;
  Rng rng(derive_seed(seed, "scenarios"));
  while (out.psi.size() < n) {
    const double psi = proposal_sample(q, rng);
    const bool ok = std::all_of(methods.begin(), methods.end(), [&](Method m) {
      return make_scenario(psi, m, defaults, seed, out.psi.size()).has_value();
    });
    if (ok) {
      out.psi.push_back(psi);
    } else if (++out.rejected > max_rejections) {
      throw DegenerateDataError("proposal places almost no mass on realizable scenarios");
    }
  }
  return out;
}

double time_to_point(const FrenetState& x, double s_cp, double speed_floor) {
  if (x.s >= s_cp || x.s_dot < speed_floor) return kInf;
  return (s_cp - x.s) / x.s_dot;
}

BaselineDecision baseline_trigger(double predicted_vut_ttc, const BaselineParams& p) {
  return {predicted_vut_ttc >= p.window_lo_s && predicted_vut_ttc <= p.window_hi_s, predicted_vut_ttc};
}

namespace {

// Speed ramp at bounded acceleration to v, then held.
Trajectory ramp_plan(const FrenetState& target, double v, double accel, int steps, double dt) {
  std::vector<FrenetState> xs{{target.s, std::max(target.s_dot, 0.0), target.l, 0.0, target.t}};
  for (int k = 0; k < steps; ++k) {
    FrenetState x = xs.back();
    const double a = std::clamp((v - x.s_dot) / dt, -accel, accel);
    x.s += x.s_dot * dt + 0.5 * a * dt * dt;
    x.s_dot += a * dt;
    x.t += dt;
    xs.push_back(x);
  }
  return Trajectory(std::move(xs), dt);
}

}  // namespace

Trajectory baseline_plan(const FrenetState& target, const BaselineParams& p, int steps, double dt) {
  return ramp_plan(target, p.speed, p.launch_accel, steps, dt);
}

namespace {

bool separated_on_axis(const Footprint& a, const Footprint& b, Point2 axis) {
  auto range = [&](const Footprint& f) {
    double lo = kInf, hi = -kInf;
    for (const auto& c : f.corners) {
      const double v = c.x * axis.x + c.y * axis.y;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return std::pair{lo, hi};
  };
  const auto [a0, a1] = range(a);
  const auto [b0, b1] = range(b);
  return a1 < b0 || b1 < a0;
}

bool convex_overlap(const Footprint& a, const Footprint& b) {
  for (const Footprint* f : {&a, &b}) {
    const std::size_t n = f->corners.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 p = f->corners[i], q = f->corners[(i + 1) % n];
      if (separated_on_axis(a, b, {-(q.y - p.y), q.x - p.x})) return false;
    }
  }
  return true;
}

FrenetState frame_to_frenet(const TelemetryFrame& f, const ReferencePath& path, double t) {
  PlantState p;
  p.pose = {{f.x_m, f.y_m}, f.heading_rad};
  p.v = f.v_mps;
  return plant_to_frenet(p, path, t);
}

// Past the path end the pose continues straight along the final heading.
Pose2 frenet_pose(const ReferencePath& path, const FrenetState& x) {
  FrenetState c = x;
  c.s = std::clamp(x.s, 0.0, path.length());
  Pose2 p = plant_from_frenet(c, path).pose;
  const double over = x.s - c.s;
  p.position.x += over * std::cos(p.heading);
  p.position.y += over * std::sin(p.heading);
  return p;
}

// The plant integrates at its rear axle; the harness observes the target at
// its box centre, 0.3 of the length ahead.
double centre_offset(const VehicleShape& shape) { return 0.3 * shape.length; }

PlantState centre_view(const PlantState& p, const VehicleShape& shape) {
  PlantState c = p;
  c.pose.position.x += centre_offset(shape) * std::cos(p.pose.heading);
  c.pose.position.y += centre_offset(shape) * std::sin(p.pose.heading);
  return c;
}

PlantState plant_at_centre(const FrenetState& centre, const ReferencePath& path, const VehicleShape& shape) {
  PlantState c = plant_from_frenet(centre, path);
  c.pose.position.x -= centre_offset(shape) * std::cos(c.pose.heading);
  c.pose.position.y -= centre_offset(shape) * std::sin(c.pose.heading);
  return c;
}

class VutDriver {
 public:
  explicit VutDriver(const ScenarioSpec& spec)
      : spec_(spec), cc_{spec.site.cp.s_on_path_B, spec.site.cp.s_on_path_A} {}

  ControlAction act(const FrenetState& vut, const FrenetState& target) {
    ControlAction a;
    switch (spec_.vut.kind) {
      case VutPolicyKind::kFollowerOcp: a = follower_ocp(vut, target); break;
      case VutPolicyKind::kConstantSpeed: a.s_ddot = spec_.vut.speed_gain * (spec_.trial.vut_speed - vut.s_dot); break;
      case VutPolicyKind::kConservativeYield: a.s_ddot = conservative(vut, target); break;
    }
    a.s_ddot = std::clamp(a.s_ddot, spec_.game.a_min, spec_.game.a_max);
    a.l_ddot = std::clamp(a.l_ddot, spec_.game.a_min, spec_.game.a_max);
    return a;
  }

 private:
  double arrival(const FrenetState& x, double s_cp) const {
    if (x.s >= s_cp) return -kInf;
    return (s_cp - x.s) / std::max(x.s_dot, spec_.trial.pet_speed_floor);
  }

  ControlAction follower_ocp(const FrenetState& vut, const FrenetState& target) {
    const auto& g = spec_.game;
    const double tv = arrival(vut, cc_.s_cp_follower);
    const double tt = arrival(target, cc_.s_cp_leader);
    const double h = spec_.vut.side_hysteresis_s;
    if (!has_side_) {
      side_ = tv <= tt ? FollowerSide::kAhead : FollowerSide::kBehind;
      has_side_ = true;
    } else if (side_ == FollowerSide::kAhead && tv > tt + h) {
      side_ = FollowerSide::kBehind;
    } else if (side_ == FollowerSide::kBehind && tv + h < tt) {
      side_ = FollowerSide::kAhead;
    }
    const Trajectory leader = make_reference(target, std::max(target.s_dot, 0.0), g.N, g.dt);
    const Trajectory ref = make_reference(vut, spec_.trial.vut_speed, g.N, g.dt);
    auto r = follower_best_response(vut, leader, ref, g, cc_, side_, spec_.risk.Q);
    if (r.status == SolveStatus::kInfeasible && side_ == FollowerSide::kAhead) {
      auto back = follower_best_response(vut, leader, ref, g, cc_, FollowerSide::kBehind, spec_.risk.Q);
      if (back.status != SolveStatus::kInfeasible || back.max_slack < r.max_slack) {
        side_ = FollowerSide::kBehind;
        r = std::move(back);
      }
    }
    return r.actions.front();
  }

  double conservative(const FrenetState& vut, const FrenetState& target) const {
    const auto& p = spec_.vut;
    const double v_ref = spec_.trial.vut_speed;
    const bool target_first = target.s < cc_.s_cp_leader &&
                              (time_to_point(target, cc_.s_cp_leader, 0.05) <= p.yield_horizon_s ||
                               cc_.s_cp_leader - target.s <= p.yield_distance_m);
    const double d = cc_.s_cp_follower - p.stop_margin_m - vut.s;
    if (!target_first || vut.s >= cc_.s_cp_follower || d < -0.5) return p.speed_gain * (v_ref - vut.s_dot);
    const double comfort = 2.0;
    const double v_des = std::min(v_ref, std::sqrt(2.0 * comfort * std::max(d, 0.0)));
    double a = p.speed_gain * (v_des - vut.s_dot);
    if (v_des < vut.s_dot) {
      a = std::min(a, d > 0.05 ? -vut.s_dot * vut.s_dot / (2.0 * d) : -vut.s_dot / spec_.game.dt);
    }
    return a;
  }

  const ScenarioSpec& spec_;
  ConflictCoords cc_;
  FollowerSide side_ = FollowerSide::kAhead;
  bool has_side_ = false;
};

Trajectory command_to_trajectory(const TrajectoryCommand& c) {
  std::vector<FrenetState> xs;
  for (std::size_t k = 0; k < c.points.size(); ++k) {
    const auto& p = c.points[k];
    xs.push_back({p.s_m, p.sdot_mps, p.l_m, p.ldot_mps, c.ts_ms / 1000.0 + static_cast<double>(k) * c.dt_s});
  }
  return Trajectory(std::move(xs), c.dt_s);
}

TrajectoryCommand trajectory_to_command(const Trajectory& traj, double ts_ms) {
  TrajectoryCommand c{ts_ms, 1, traj.dt(), {}};
  for (const auto& x : traj.states()) c.points.push_back({x.s, x.s_dot, x.l, x.l_dot});
  return c;
}

void update_crossing(std::optional<double>& slot, double s_old, double s_new, double s_cp, double t, double dt) {
  if (slot || s_old >= s_cp || s_new < s_cp) return;
  slot = t + dt * (s_cp - s_old) / (s_new - s_old);
}

}  // namespace

TrialRecord run_trial(const ScenarioSpec& spec) {
  spec.validate();
  TrialRecord rec;
  rec.index = spec.index;
  rec.method = spec.method;
  rec.psi_target = spec.psi_target;
  rec.seed = spec.seed;

  const Site& site = spec.site;
  const auto& vpath = site.vut_path;
  const auto& tpath = site.target_path;
  const double s_cp_v = site.cp.s_on_path_A;
  const double s_cp_t = site.cp.s_on_path_B;
  const ConflictCoords cc{s_cp_t, s_cp_v};
  const auto& tp = spec.trial;
  const auto& g = spec.game;

  std::unique_ptr<Transport> link;
  Broker* broker = nullptr;
  if (tp.use_broker) {
    auto b = std::make_unique<Broker>(spec.link);
    broker = b.get();
    link = std::move(b);
  } else {
    link = std::make_unique<DirectTransport>();
  }
  const std::string target_id = "target/1";
  const auto cloud_target = link->subscribe("target/+/state");
  const auto cloud_vut = link->subscribe(kVutStateTopic);
  const auto target_cmds = link->subscribe(target_trajectory_topic(1));

  const double tick = tp.tick_ms / 1000.0;
  const auto& tshape = site.params.target_shape;
  PlantState plant = plant_at_centre(spec.target0, tpath, tshape);
  FrenetState xv = spec.vut0;
  ControlAction av{};
  VutDriver driver(spec);
  Trajectory plan = make_reference(spec.target0, spec.target0.s_dot, g.N, g.dt);

  GameLoop loop({cc, tp.target_speed, tp.vut_speed}, g, spec.risk);
  bool active = false;
  bool triggered = false;
  std::string sigma = "-";
  std::optional<TelemetryFrame> seen_target, seen_vut;
  const SlCorridor corridor = build_sl_corridor(tpath, {}, {0.5, site.params.target_shape});
  const CorridorConfig st_cfg{0.5, spec.site.params.target_shape};
  const int baseline_steps = static_cast<int>(std::lround(5.0 / g.dt));

  auto invalidate = [&](const std::string& why) {
    rec.valid = false;
    rec.invalid_reason = why;
  };

  double last_vut_accel = 0.0;
  bool pet_open = true;
  for (long k = 0; rec.valid; ++k) {
    const long t_ms = k * tp.tick_ms;
    const double t = static_cast<double>(t_ms) / 1000.0;
    const double now = static_cast<double>(t_ms);
    const bool control = k % tp.control_ticks == 0;
    xv.t = t;
    const PlantState pc = centre_view(plant, tshape);
    const FrenetState xt = plant_to_frenet(pc, tpath, t);
    const Pose2 pv = frenet_pose(vpath, xv);
    const double vv = std::hypot(xv.s_dot, xv.l_dot);

    link->publish(target_state_topic(1),
                  encode_telemetry({target_id, now, pc.pose.position.x, pc.pose.position.y, pc.pose.heading, pc.v}),
                  now, target_id);
    link->publish(kVutStateTopic, encode_telemetry({"vut", now, pv.position.x, pv.position.y, pv.heading, vv}),
                  now, "vut");
    rec.telemetry_frames += 2;

    if (control) {
      for (const auto& m : link->poll(cloud_target, now)) seen_target = decode_telemetry(m.payload);
      for (const auto& m : link->poll(cloud_vut, now)) seen_vut = decode_telemetry(m.payload);
      if (seen_target && seen_vut) {
        const FrenetState mt = frame_to_frenet(*seen_target, tpath, t);
        const FrenetState mv = frame_to_frenet(*seen_vut, vpath, t);
        Trajectory out;
        if (spec.method == Method::kTroublemaker) {
          if (!active && time_to_point(mv, s_cp_v) <= tp.activation_ttc_s) active = true;
          if (active && !loop.terminated()) {
            if (auto sol = loop.step(mt, mv)) {
              sigma = to_string(sol->sigma_star);
              if (sol->status == SolveStatus::kInfeasible) {
                ++rec.infeasible_steps;
                if (tp.infeasible_invalidates) {
                  invalidate("solver infeasible at t=" + format_short(t));
                  break;
                }
              }
              ObstaclePrediction pred;
              for (const auto& x : make_reference(mv, std::max(mv.s_dot, 0.0), g.N, g.dt).states()) {
                if (x.s > vpath.length()) break;
                pred.times.push_back(x.t);
                pred.footprints.push_back(
                    Footprint::box(frenet_pose(vpath, x), site.params.vut_shape.length, site.params.vut_shape.width));
              }
              try {
                const StGraph st = build_st_graph(tpath, {pred}, st_cfg);
                out = sample_and_select(sol->leader_traj.states(), corridor, st, spec.lattice).trajectory;
              } catch (const PlanningError& e) {
                if (!tp.brake_on_planner_fault) {
                  invalidate(std::string("planner fault at t=") + format_short(t) + ": " + e.what());
                  break;
                }
                ++rec.planner_fallbacks;
                out = ramp_plan(mt, 0.0, -g.a_min, g.N, g.dt);
              }
            }
          }
          if (out.empty()) {
            if (loop.terminated()) {
              sigma = "-";
              out = ramp_plan(mt, tp.target_speed, g.a_max, g.N, g.dt);
            } else {
              out = make_reference(mt, tp.target_speed, g.N, g.dt);
            }
          }
        } else {
          if (!triggered && baseline_trigger(time_to_point(mv, s_cp_v), spec.baseline).launch) {
            triggered = true;
            rec.trigger_time = t;
          }
          out = triggered ? baseline_plan(mt, spec.baseline, baseline_steps, g.dt)
                          : make_reference(mt, 0.0, g.N, g.dt);
        }
        dispatch_trajectory(*link, trajectory_to_command(out, now), now);
      }
    }

    for (const auto& m : link->poll(target_cmds, now)) plan = command_to_trajectory(decode_trajectory(m.payload));

    if (control) av = driver.act(xv, xt);
    const auto [next_plant, cmds] = track_step(plant, plan, tpath, t, tick, spec.gains, tshape);

    const double t_arr_v = rec.vut_cross_time ? *rec.vut_cross_time
                                              : t + (s_cp_v - xv.s) / std::max(xv.s_dot, tp.pet_speed_floor);
    const double t_arr_t = rec.target_cross_time ? *rec.target_cross_time
                                                 : t + (s_cp_t - xt.s) / std::max(xt.s_dot, tp.pet_speed_floor);
    const double pet_rt = std::abs(t_arr_t - t_arr_v);
    const bool first = rec.vut_cross_time || rec.target_cross_time;
    const bool second = rec.vut_cross_time && rec.target_cross_time;
    rec.conflict = rec.conflict || first;
    if (first && pet_open) {
      pet_open = !second;  // one sample after both crossed: the realized PET
      rec.pet_times.push_back(t);
      rec.pet_series.push_back(pet_rt);
    }
    if (control) {
      rec.rows.push_back({t, "target", xt, pc.pose.position, plant.v, cmds.accel, pet_rt, sigma});
      rec.rows.push_back({t, "vut", xv, pv.position, vv, av.s_ddot, pet_rt, "-"});
    }
    if (k > 0) rec.max_jerk = std::max(rec.max_jerk, std::abs(av.s_ddot - last_vut_accel) / tick);
    last_vut_accel = av.s_ddot;
    if (control) {
      rec.target_speed_times.push_back(t);
      rec.target_speeds.push_back(plant.v);
    }
    if (!rec.collision) {
      const auto vb = Footprint::box(pv, site.params.vut_shape.length, site.params.vut_shape.width);
      rec.collision = convex_overlap(vb, Footprint::box(pc.pose, tshape.length, tshape.width));
      if (rec.collision) rec.collision_time = t;
    }

    if (rec.vut_cross_time && rec.target_cross_time && xv.s >= s_cp_v + tp.exit_margin_m &&
        xt.s >= s_cp_t + tp.exit_margin_m) {
      rec.end_reason = "cleared";
      break;
    }
    if (t >= tp.max_duration_s - 1e-9) {
      rec.end_reason = "timeout";
      break;
    }

    const double sv_old = xv.s, st_old = xt.s;
    xv = step(xv, av, tick, g.limits()).state;
    plant = next_plant;
    const double st_new = plant_to_frenet(centre_view(plant, tshape), tpath, t + tick).s;
    update_crossing(rec.vut_cross_time, sv_old, xv.s, s_cp_v, t, tick);
    update_crossing(rec.target_cross_time, st_old, st_new, s_cp_t, t, tick);
  }

  rec.min_pet = rec.pet_series.empty() ? kInf : *std::min_element(rec.pet_series.begin(), rec.pet_series.end());
  if (rec.vut_cross_time && rec.target_cross_time) rec.realized_signed_pet = *rec.target_cross_time - *rec.vut_cross_time;
  if (spec.method == Method::kTroublemaker && active) {
    rec.game_termination = to_string(loop.reason());
    rec.game_elapsed = loop.elapsed();
    rec.game_steps = loop.steps();
  }
  if (broker) rec.link_log = broker->log();
  return rec;
}

void write_trial_log(const std::filesystem::path& path, const TrialRecord& rec) {
  std::ofstream out(path);
  if (!out) throw InvalidStateError("cannot write trial log " + path.string());
  out << "t_s\tactor\ts_m\tsdot_mps\tl_m\tldot_mps\tx_m\ty_m\tv_mps\taccel_cmd\tpet_rt_s\tsigma\n";
  for (const auto& r : rec.rows) {
    out << format_short(r.t) << '\t' << r.actor << '\t' << format_short(r.x.s) << '\t' << format_short(r.x.s_dot)
        << '\t' << format_short(r.x.l) << '\t' << format_short(r.x.l_dot) << '\t' << format_short(r.position.x)
        << '\t' << format_short(r.position.y) << '\t' << format_short(r.v) << '\t' << format_short(r.accel_cmd)
        << '\t' << format_short(r.pet_rt) << '\t' << r.sigma << '\n';
  }
}

double mean_min_pet_error(const std::vector<TrialRecord>& records, const std::vector<double>& targets) {
  if (records.size() != targets.size()) throw InvalidStateError("records and targets differ in length");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].valid) continue;
    sum += std::abs(records[i].min_pet - std::abs(targets[i]));
    ++n;
  }
  if (n == 0) throw DegenerateDataError("no valid trials");
  return sum / static_cast<double>(n);
}

double hausdorff_distance(const std::vector<Point2>& a, const std::vector<Point2>& b) {
  if (a.empty() || b.empty()) throw DegenerateDataError("Hausdorff distance of an empty set");
  auto directed = [](const std::vector<Point2>& p, const std::vector<Point2>& q) {
    double worst = 0.0;
    for (const auto& x : p) {
      double best = kInf;
      for (const auto& y : q) best = std::min(best, (x.x - y.x) * (x.x - y.x) + (x.y - y.y) * (x.y - y.y));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

std::vector<Point2> speed_curve(const TrialRecord& rec, const TrialParams& params) {
  if (rec.target_speeds.empty()) throw DegenerateDataError("trial has no speed samples");
  const double dt = rec.target_speed_times.size() > 1 ? rec.target_speed_times[1] - rec.target_speed_times[0]
                                                      : params.tick_ms * params.control_ticks / 1000.0;
  const auto count = static_cast<std::size_t>(std::floor(params.hausdorff_window_s / dt + 1e-9));
  std::vector<Point2> pts;
  for (std::size_t j = 0; j <= count; ++j) {
    const double v = rec.target_speeds[std::min(j, rec.target_speeds.size() - 1)];
    pts.push_back({static_cast<double>(j) * dt / params.hausdorff_time_scale_s, v / params.hausdorff_speed_scale_mps});
  }
  return pts;
}

double severe_conflict_rate(const std::vector<TrialRecord>& records, double threshold) {
  std::size_t n = 0, severe = 0;
  for (const auto& r : records) {
    if (!r.valid) continue;
    ++n;
    if (r.min_pet < threshold) ++severe;
  }
  if (n == 0) throw DegenerateDataError("no valid trials");
  return static_cast<double>(severe) / static_cast<double>(n);
}

const ArmReport* MetricsReport::arm(Method m) const {
  for (const auto& a : arms) {
    if (a.method == m) return &a;
  }
  return nullptr;
}

ArmReport summarize_arm(Method m, const std::vector<TrialRecord>& records, const TrialParams& params) {
  ArmReport a;
  a.method = m;
  std::vector<TrialRecord> valid;
  for (const auto& r : records) {
    if (r.method != m) continue;
    if (r.valid) {
      valid.push_back(r);
    } else {
      ++a.invalid;
    }
  }
  a.valid = valid.size();
  if (valid.empty()) return a;
  std::vector<double> targets;
  for (const auto& r : valid) targets.push_back(r.psi_target);
  a.mean_min_pet_error = mean_min_pet_error(valid, targets);
  a.severe_conflict_rate = severe_conflict_rate(valid, 2.3);
  double jerk_sum = 0.0;
  for (const auto& r : valid) {
    jerk_sum += r.max_jerk;
    a.jerk_max = std::max(a.jerk_max, r.max_jerk);
  }
  a.jerk_mean = jerk_sum / static_cast<double>(valid.size());
  std::vector<std::vector<Point2>> curves;
  for (const auto& r : valid) curves.push_back(speed_curve(r, params));
  a.hausdorff.assign(valid.size(), std::vector<double>(valid.size(), 0.0));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    for (std::size_t j = i + 1; j < curves.size(); ++j) {
      const double h = hausdorff_distance(curves[i], curves[j]);
      a.hausdorff[i][j] = a.hausdorff[j][i] = h;
      sum += h;
      a.hausdorff_max = std::max(a.hausdorff_max, h);
      ++pairs;
    }
  }
  if (pairs) a.hausdorff_mean = sum / static_cast<double>(pairs);
  return a;
}

namespace {

std::vector<TrialRecord> run_parallel(const std::vector<ScenarioSpec>& specs, unsigned parallelism) {
  std::vector<TrialRecord> out(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        out[i] = run_trial(specs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(parallelism, static_cast<unsigned>(specs.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

BatchResult run_batch(const std::vector<ScenarioSpec>& specs, unsigned parallelism, const ReplacementFn& replacement,
                      std::size_t replacement_cap) {
  BatchResult res;
  res.records = run_parallel(specs, parallelism);
  std::vector<Method> methods;
  for (const auto& s : specs) {
    if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) methods.push_back(s.method);
  }
  for (Method m : methods) {
    const auto need = static_cast<std::size_t>(
        std::count_if(specs.begin(), specs.end(), [&](const ScenarioSpec& s) { return s.method == m; }));
    auto valid_count = [&] {
      return static_cast<std::size_t>(std::count_if(res.records.begin(), res.records.end(), [&](const TrialRecord& r) {
        return r.method == m && r.valid;
      }));
    };
    std::size_t used = 0;
    bool exhausted = !replacement;
    while (!exhausted && valid_count() < need && used < replacement_cap) {
      std::vector<ScenarioSpec> extra;
      const std::size_t missing = need - valid_count();
      while (extra.size() < missing && used < replacement_cap) {
        auto s = replacement(m, used);
        if (!s) {
          exhausted = true;
          break;
        }
        ++used;
        extra.push_back(std::move(*s));
      }
      if (extra.empty()) break;
      for (auto& r : run_parallel(extra, parallelism)) res.records.push_back(std::move(r));
    }
    const TrialParams params = std::find_if(specs.begin(), specs.end(), [&](const ScenarioSpec& s) {
                                 return s.method == m;
                               })->trial;
    ArmReport a = summarize_arm(m, res.records, params);
    a.requested = need;
    a.replacements = used;
    a.partial = a.valid < need;
    res.report.arms.push_back(std::move(a));
  }
  return res;
}

std::string format_report(const MetricsReport& report) {
  std::ostringstream out;
  for (const auto& a : report.arms) {
    out << "[" << to_string(a.method) << "]\n";
    out << "trials_requested = " << a.requested << "\n";
    out << "trials_valid = " << a.valid << "\n";
    out << "trials_invalid = " << a.invalid << "\n";
    out << "replacements = " << a.replacements << "\n";
    out << "partial = " << (a.partial ? "true" : "false") << "\n";
    out << "mean_min_pet_error_s = " << format_short(a.mean_min_pet_error) << "\n";
    out << "severe_conflict_rate = " << format_short(a.severe_conflict_rate) << "\n";
    out << "hausdorff_mean = " << format_short(a.hausdorff_mean) << "\n";
    out << "hausdorff_max = " << format_short(a.hausdorff_max) << "\n";
    out << "vut_max_jerk_mean_mps3 = " << format_short(a.jerk_mean) << "\n";
    out << "vut_max_jerk_max_mps3 = " << format_short(a.jerk_max) << "\n";
  }
  return out.str();
}

void write_report(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw InvalidStateError("cannot write report " + path.string());
  out << format_report(report);
}

void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialRecord>& records) {
  std::ofstream out(path);
  if (!out) throw InvalidStateError("cannot write " + path.string());
  out << "index,method,psi_target_s,valid,invalid_reason,min_pet_s,abs_error_s,realized_signed_pet_s,severe,"
         "game_termination,game_elapsed_s,end_reason,max_jerk_mps3,collision\n";
  for (const auto& r : records) {
    out << r.index << ',' << to_string(r.method) << ',' << format_short(r.psi_target) << ','
        << (r.valid ? "true" : "false") << ",\"" << r.invalid_reason << "\"," << format_short(r.min_pet) << ','
        << format_short(std::abs(r.min_pet - std::abs(r.psi_target))) << ','
        << (r.realized_signed_pet ? format_short(*r.realized_signed_pet) : std::string("-")) << ','
        << (r.min_pet < 2.3 ? "true" : "false") << ',' << r.game_termination << ',' << format_short(r.game_elapsed)
        << ',' << r.end_reason << ',' << format_short(r.max_jerk) << ',' << (r.collision ? "true" : "false")
        << '\n';
  }
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidStateError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

double field_double(const std::string& text, std::size_t line) {
  const auto v = parse_double(text);
  if (!v) throw ParseError("expected a number, got '" + text + "'", line);
  return *v;
}

}  // namespace

std::vector<TrialRow> read_trial_log(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0].rfind("t_s\tactor\t", 0) != 0) throw ParseError("missing trial log header", 1);
  std::vector<TrialRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], '\t');
    if (f.size() != 12) throw ParseError("expected 12 fields", i + 1);
    TrialRow r;
    r.t = field_double(f[0], i + 1);
    r.actor = f[1];
    r.x = {field_double(f[2], i + 1), field_double(f[3], i + 1), field_double(f[4], i + 1), field_double(f[5], i + 1),
           r.t};
    r.position = {field_double(f[6], i + 1), field_double(f[7], i + 1)};
    r.v = field_double(f[8], i + 1);
    r.accel_cmd = field_double(f[9], i + 1);
    r.pet_rt = field_double(f[10], i + 1);
    r.sigma = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_scenarios(const std::filesystem::path& path, const ScenarioSet& set) {
  if (set.psi.size() != set.weight.size()) throw InvalidStateError("scenario targets and weights differ in length");
  std::ofstream out(path);
  if (!out) throw InvalidStateError("cannot write " + path.string());
  out << "# seed = " << set.seed << "\n# proposal = " << set.proposal << "\n# rejected = " << set.rejected << "\n";
  out << "index\tpsi_target_s\tweight\n";
  for (std::size_t i = 0; i < set.psi.size(); ++i) {
    out << i << '\t' << format_exact(set.psi[i]) << '\t' << format_exact(set.weight[i]) << '\n';
  }
}

ScenarioSet read_scenarios(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  ScenarioSet set;
  bool header = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = trim(lines[i]);
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string key(trim(line.substr(1, eq - 1)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key == "seed") {
        const auto v = parse_int(value);
        if (!v || *v < 0) throw ParseError("bad seed", i + 1);
        set.seed = static_cast<std::uint64_t>(*v);
      } else if (key == "proposal") {
        set.proposal = value;
      } else if (key == "rejected") {
        const auto v = parse_int(value);
        if (!v || *v < 0) throw ParseError("bad rejection count", i + 1);
        set.rejected = static_cast<std::size_t>(*v);
      }
      continue;
    }
    if (!header) {
      if (line != "index\tpsi_target_s\tweight") throw ParseError("missing scenario header", i + 1);
      header = true;
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 3) throw ParseError("expected 3 fields", i + 1);
    const auto idx = parse_int(f[0]);
    if (!idx || static_cast<std::size_t>(*idx) != set.psi.size()) throw ParseError("indices must count from 0", i + 1);
    set.psi.push_back(field_double(f[1], i + 1));
    set.weight.push_back(field_double(f[2], i + 1));
  }
  if (!header) throw ParseError("missing scenario header", lines.size() + 1);
  return set;
}

MetricsReport parse_report(const std::string& text) {
  MetricsReport report;
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++n;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("malformed section", n);
      try {
        report.arms.push_back({});
        report.arms.back().method = parse_method(std::string(line.substr(1, line.size() - 2)));
      } catch (const ConfigError&) {
        throw ParseError("unknown arm", n);
      }
      continue;
    }
    if (report.arms.empty()) throw ParseError("metric outside an arm section", n);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", n);
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    ArmReport& a = report.arms.back();
    auto count = [&]() {
      const auto v = parse_int(value);
      if (!v || *v < 0) throw ParseError("expected a count", n);
      return static_cast<std::size_t>(*v);
    };
    if (key == "trials_requested") a.requested = count();
    else if (key == "trials_valid") a.valid = count();
    else if (key == "trials_invalid") a.invalid = count();
    else if (key == "replacements") a.replacements = count();
    else if (key == "partial") {
      if (value != "true" && value != "false") throw ParseError("expected true or false", n);
      a.partial = value == "true";
    } else if (key == "mean_min_pet_error_s") a.mean_min_pet_error = field_double(value, n);
    else if (key == "severe_conflict_rate") a.severe_conflict_rate = field_double(value, n);
    else if (key == "hausdorff_mean") a.hausdorff_mean = field_double(value, n);
    else if (key == "hausdorff_max") a.hausdorff_max = field_double(value, n);
    else if (key == "vut_max_jerk_mean_mps3") a.jerk_mean = field_double(value, n);
    else if (key == "vut_max_jerk_max_mps3") a.jerk_max = field_double(value, n);
    else throw ParseError("unknown metric '" + key + "'", n);
  }
  return report;
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidStateError("cannot read report " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_report(s.str());
}

}  // namespace troublemaker
