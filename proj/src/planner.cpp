#include "troublemaker/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace troublemaker {

Footprint Footprint::box(const Pose2& center, double length, double width) {
  const double c = std::cos(center.heading), s = std::sin(center.heading);
  const double hl = 0.5 * length, hw = 0.5 * width;
  Footprint f;
  for (auto [a, b] : {std::pair{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}) {
    f.corners.push_back({center.position.x + a * c - b * s, center.position.y + a * s + b * c});
  }
  return f;
}

namespace {

struct Span {
  double s0, s1, l0, l1;
};

// Frenet bounding box of a footprint, from its corners and points along the
// edges (arcs bend the projection of a straight edge).
std::optional<Span> project_footprint(const ReferencePath& ref, const Footprint& f) {
  if (f.corners.empty()) return std::nullopt;
  Span sp{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  bool any = false;
  const std::size_t n = f.corners.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a = f.corners[i], b = f.corners[(i + 1) % n];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const int pieces = std::max(1, static_cast<int>(std::ceil(len / 0.25)));
    for (int k = 0; k < pieces; ++k) {
      const double u = static_cast<double>(k) / pieces;
      const auto fp = ref.project({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
      // Points beyond either end of the path do not constrain it.
      if (fp.s <= 0.0 || fp.s >= ref.length()) continue;
      any = true;
      sp.s0 = std::min(sp.s0, fp.s);
      sp.s1 = std::max(sp.s1, fp.s);
      sp.l0 = std::min(sp.l0, fp.l);
      sp.l1 = std::max(sp.l1, fp.l);
    }
  }
  if (!any) return std::nullopt;
  return sp;
}

// Station extent of the footprint part lying within |l| <= band. Boxes are
// sampled over their interior, other polygons along the edges.
std::optional<Span> band_span(const ReferencePath& ref, const Footprint& f, double band) {
  const std::size_t n = f.corners.size();
  if (n == 0) return std::nullopt;
  std::vector<Point2> pts;
  if (n == 4) {
    const Point2 o = f.corners[0], a = f.corners[1], b = f.corners[3];
    const int na = std::max(1, static_cast<int>(std::ceil(std::hypot(a.x - o.x, a.y - o.y) / 0.25)));
    const int nb = std::max(1, static_cast<int>(std::ceil(std::hypot(b.x - o.x, b.y - o.y) / 0.25)));
    for (int i = 0; i <= na; ++i) {
      for (int j = 0; j <= nb; ++j) {
        const double u = static_cast<double>(i) / na, w = static_cast<double>(j) / nb;
        pts.push_back({o.x + u * (a.x - o.x) + w * (b.x - o.x), o.y + u * (a.y - o.y) + w * (b.y - o.y)});
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 a = f.corners[i], b = f.corners[(i + 1) % n];
      const int pieces = std::max(1, static_cast<int>(std::ceil(std::hypot(b.x - a.x, b.y - a.y) / 0.25)));
      for (int k = 0; k < pieces; ++k) {
        const double u = static_cast<double>(k) / pieces;
        pts.push_back({a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)});
      }
    }
  }
  Span sp{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), -band, band};
  bool any = false;
  for (const auto& p : pts) {
    const auto fp = ref.project(p);
    if (fp.s <= 0.0 || fp.s >= ref.length() || std::abs(fp.l) > band) continue;
    any = true;
    sp.s0 = std::min(sp.s0, fp.s);
    sp.s1 = std::max(sp.s1, fp.s);
  }
  if (!any) return std::nullopt;
  return sp;
}

}  // namespace

bool SlCorridor::any_blocked() const {
  return std::any_of(stations.begin(), stations.end(), [](const SlStation& st) { return st.blocked; });
}

std::optional<std::pair<double, double>> SlCorridor::bounds_at(double s) const {
  if (stations.empty()) return std::nullopt;
  auto hi = std::lower_bound(stations.begin(), stations.end(), s,
                             [](const SlStation& st, double v) { return st.s < v; });
  if (hi == stations.end()) hi = stations.end() - 1;
  auto lo = (hi != stations.begin() && hi->s > s) ? hi - 1 : hi;
  if (lo->blocked || hi->blocked) return std::nullopt;
  return std::pair{std::max(lo->l_min, hi->l_min), std::min(lo->l_max, hi->l_max)};
}

void SlCorridor::validate() const {
  for (std::size_t i = 0; i < stations.size(); ++i) {
    if (i && !(stations[i].s > stations[i - 1].s)) throw InvalidStateError("corridor stations must increase");
    if (!stations[i].blocked && !(stations[i].l_min < stations[i].l_max)) {
      throw InvalidStateError("corridor bounds must satisfy l_min < l_max");
    }
  }
}

SlCorridor build_sl_corridor(const ReferencePath& ref, const std::vector<Footprint>& obstacles,
                             const CorridorConfig& cfg) {
  if (!(cfg.station_spacing > 0.0)) throw InvalidStateError("station spacing must be positive");
  std::vector<Span> spans;
  for (const auto& f : obstacles) {
    if (auto sp = project_footprint(ref, f)) spans.push_back(*sp);
  }
  const double half_lane = 0.5 * ref.lane_width();
  const double inflate = 0.5 * cfg.ego.width;
  SlCorridor out;
  const auto count = static_cast<std::size_t>(std::floor(ref.length() / cfg.station_spacing + 1e-9));
  std::vector<double> ss;
  for (std::size_t i = 0; i <= count; ++i) ss.push_back(static_cast<double>(i) * cfg.station_spacing);
  if (ss.back() < ref.length() - 1e-9) ss.push_back(ref.length());
  for (double s : ss) {
    SlStation st{s, -half_lane, half_lane, false};
    for (const auto& sp : spans) {
      if (s < sp.s0 || s > sp.s1 || st.blocked) continue;
      const double a = sp.l0 - inflate, b = sp.l1 + inflate;
      if (b <= st.l_min || a >= st.l_max) continue;
      const double left = st.l_max - b;   // room above the obstacle
      const double right = a - st.l_min;  // room below
      if (left <= 0.0 && right <= 0.0) {
        st.blocked = true;
      } else if (left >= right) {
        st.l_min = b;
      } else {
        st.l_max = a;
      }
    }
    out.stations.push_back(st);
  }
  return out;
}

bool StGraph::occupied(double t, double s) const {
  return std::any_of(blocked.begin(), blocked.end(), [&](const StRect& r) { return r.contains(t, s); });
}

StGraph build_st_graph(const ReferencePath& ref, const std::vector<ObstaclePrediction>& predictions,
                       const CorridorConfig& cfg) {
  StGraph g;
  const double band = 0.5 * cfg.ego.width;
  const double ds = 0.5 * cfg.ego.length;
  for (const auto& pred : predictions) {
    if (pred.times.size() != pred.footprints.size()) {
      throw InvalidStateError("prediction times and footprints differ in length");
    }
    std::vector<std::optional<Span>> spans;
    for (const auto& f : pred.footprints) spans.push_back(band_span(ref, f, band));
    // Each pair of occupied neighbours covers the interval between them;
    // pieces with equal station extents merge.
    auto push = [&](StRect r) {
      if (!g.blocked.empty()) {
        auto& last = g.blocked.back();
        if (last.t1 == r.t0 && std::abs(last.s0 - r.s0) < 1e-9 && std::abs(last.s1 - r.s1) < 1e-9) {
          last.t1 = r.t1;
          return;
        }
      }
      g.blocked.push_back(r);
    };
    for (std::size_t k = 0; k < spans.size(); ++k) {
      if (!spans[k]) continue;
      const bool prev = k > 0 && spans[k - 1];
      const bool next = k + 1 < spans.size() && spans[k + 1];
      if (next) {
        push({pred.times[k], pred.times[k + 1], std::min(spans[k]->s0, spans[k + 1]->s0) - ds,
              std::max(spans[k]->s1, spans[k + 1]->s1) + ds});
      } else if (!prev) {
        push({pred.times[k], pred.times[k], spans[k]->s0 - ds, spans[k]->s1 + ds});
      }
    }
  }
  return g;
}

namespace {

bool in_corridor(const SlCorridor& corridor, double s, double l) {
  const auto b = corridor.bounds_at(s);
  return b && l >= b->first - 1e-12 && l <= b->second + 1e-12;
}

// Smoothstep 10u^3 - 15u^4 + 6u^5 and its derivatives.
double ramp_d2(double u) { return 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u); }

struct Scored {
  CandidateTrajectory cand;
  double mean_abs_l = 0.0;
  std::size_t index = 0;
};

// Cost, then mean |l|, then lattice index.
bool scored_less(const Scored& a, const Scored& b) {
  const double tol = 1e-9 * (1.0 + std::max(std::abs(a.cand.cost), std::abs(b.cand.cost)));
  if (std::abs(a.cand.cost - b.cand.cost) > tol) return a.cand.cost < b.cand.cost;
  if (std::abs(a.mean_abs_l - b.mean_abs_l) > 1e-12) return a.mean_abs_l < b.mean_abs_l;
  return a.index < b.index;
}

bool segment_clear(const FrenetState& x, const ControlAction& a, double dt, int checks, const SlCorridor& corridor,
                   const StGraph& st) {
  for (int c = 1; c <= checks; ++c) {
    const auto y = step_unclamped(x, a, dt * c / checks);
    if (!in_corridor(corridor, y.s, y.l) || st.occupied(y.t, y.s)) return false;
  }
  return true;
}

}  // namespace

std::vector<ControlAction> implied_actions(const std::vector<FrenetState>& states) {
  std::vector<ControlAction> out;
  for (std::size_t k = 0; k + 1 < states.size(); ++k) {
    const double dt = states[k + 1].t - states[k].t;
    if (!(dt > 0.0)) throw InvalidStateError("game states must have increasing time stamps");
    out.push_back({(states[k + 1].s_dot - states[k].s_dot) / dt, (states[k + 1].l_dot - states[k].l_dot) / dt});
  }
  return out;
}

CandidateTrajectory sample_and_select(const std::vector<FrenetState>& game_states, const SlCorridor& corridor,
                                      const StGraph& st, const LatticeConfig& cfg) {
  if (game_states.empty()) throw InvalidStateError("sample_and_select needs game states");
  if (cfg.lateral_offsets.empty() || cfg.speed_offsets.empty() || cfg.checks_per_segment < 1) {
    throw InvalidStateError("lattice needs offsets and at least one check per segment");
  }
  if (game_states.size() == 1) {
    CandidateTrajectory c;
    c.trajectory = Trajectory(game_states, 0.0);
    return c;
  }
  const auto base = implied_actions(game_states);
  const std::size_t n = base.size();
  const double horizon = game_states.back().t - game_states.front().t;
  // Per-unit offset action profiles. Midpoint samples of the ramp derivatives,
  // rescaled so a unit offset is reached exactly at the horizon end.
  std::vector<double> lat_shape(n), lon_shape(n);
  {
    FrenetState probe{0.0, 0.0, 0.0, 0.0, 0.0};
    double lon_total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double dt = game_states[k + 1].t - game_states[k].t;
      const double u = (game_states[k].t + 0.5 * dt - game_states.front().t) / horizon;
      lat_shape[k] = ramp_d2(u) / (horizon * horizon);
      lon_shape[k] = 1.0 / horizon;
      probe = step_unclamped(probe, {0.0, lat_shape[k]}, dt);
      lon_total += lon_shape[k] * dt;
    }
    if (std::abs(probe.l) > 1e-12) {
      for (auto& v : lat_shape) v /= probe.l;
    } else {
      // Too short a horizon for a smooth lateral ramp.
      std::fill(lat_shape.begin(), lat_shape.end(), 2.0 / (horizon * horizon));
    }
    for (auto& v : lon_shape) v /= lon_total;
  }

  const auto& w = cfg.deviation_weights;
  const double tol = 1e-9;
  std::vector<Scored> survivors;
  std::size_t bad_action = 0, bad_speed = 0, bad_clearance = 0;
  for (std::size_t i = 0; i < cfg.lateral_offsets.size(); ++i) {
    for (std::size_t j = 0; j < cfg.speed_offsets.size(); ++j) {
      Scored sc;
      sc.index = i * cfg.speed_offsets.size() + j;
      std::vector<FrenetState> xs{game_states.front()};
      std::vector<ControlAction> as;
      bool ok = true;
      double dev = 0.0, jerk = 0.0, abs_l = 0.0;
      for (std::size_t k = 0; k < n && ok; ++k) {
        const double dt = game_states[k + 1].t - game_states[k].t;
        ControlAction a{base[k].s_ddot + cfg.speed_offsets[j] * lon_shape[k],
                        base[k].l_ddot + cfg.lateral_offsets[i] * lat_shape[k]};
        // A braking profile comes to rest and stays there; likewise at v_max.
        a.s_ddot = std::clamp(a.s_ddot, cfg.limits.a_min, cfg.limits.a_max);
        const double v0 = xs.back().s_dot;
        if (v0 + a.s_ddot * dt < 0.0) a.s_ddot = -v0 / dt;
        if (v0 + a.s_ddot * dt > cfg.limits.v_max) a.s_ddot = (cfg.limits.v_max - v0) / dt;
        if (std::abs(a.l_ddot) > cfg.lateral_accel_limit + tol) {
          ++bad_action;
          ok = false;
          break;
        }
        const FrenetState y = step_unclamped(xs.back(), a, dt);
        if (y.s_dot < -tol || y.s_dot > cfg.limits.v_max + tol) {
          ++bad_speed;
          ok = false;
          break;
        }
        if (!segment_clear(xs.back(), a, dt, cfg.checks_per_segment, corridor, st)) {
          ++bad_clearance;
          ok = false;
          break;
        }
        const auto& g = game_states[k + 1];
        const double e[4] = {y.s - g.s, y.s_dot - g.s_dot, y.l - g.l, y.l_dot - g.l_dot};
        dev += w[0] * e[0] * e[0] + w[1] * e[1] * e[1] + w[2] * e[2] * e[2] + w[3] * e[3] * e[3];
        if (!as.empty()) {
          const double js = (a.s_ddot - as.back().s_ddot) / dt, jl = (a.l_ddot - as.back().l_ddot) / dt;
          jerk += (js * js + jl * jl) * dt;
        }
        abs_l += std::abs(y.l);
        as.push_back(a);
        xs.push_back(y);
      }
      if (!ok) continue;
      sc.cand.trajectory = Trajectory(xs, game_states[1].t - game_states[0].t);
      sc.cand.actions = std::move(as);
      sc.cand.deviation_cost = dev;
      sc.cand.cost = dev + cfg.jerk_weight * jerk;
      sc.mean_abs_l = abs_l / static_cast<double>(n);
      survivors.push_back(std::move(sc));
    }
  }
  if (survivors.empty()) {
    throw PlanningError("every lattice candidate rejected (action limits " + std::to_string(bad_action) +
                        ", speed bounds " + std::to_string(bad_speed) + ", corridor/ST " +
                        std::to_string(bad_clearance) + ")");
  }
  return std::min_element(survivors.begin(), survivors.end(), scored_less)->cand;
}

bool candidate_admissible(const CandidateTrajectory& c, const SlCorridor& corridor, const StGraph& st,
                          const LatticeConfig& cfg) {
  const auto& xs = c.trajectory.states();
  const double tol = 1e-6;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& x = xs[k];
    if (k > 0) {
      if (!in_corridor(corridor, x.s, x.l) || st.occupied(x.t, x.s)) return false;
      const double dt = x.t - xs[k - 1].t;
      const double a = (x.s_dot - xs[k - 1].s_dot) / dt;
      if (a < cfg.limits.a_min - tol || a > cfg.limits.a_max + tol) return false;
    }
    if (x.s_dot < -tol || x.s_dot > cfg.limits.v_max + tol) return false;
  }
  return true;
}

ReferenceSample sample_trajectory(const Trajectory& traj, double t) {
  if (traj.empty()) throw InvalidStateError("empty reference trajectory");
  const auto& xs = traj.states();
  ReferenceSample out;
  if (xs.size() == 1 || t >= xs.back().t) {
    const auto& last = xs.back();
    const double tau = std::max(0.0, t - last.t);
    out.state = {last.s + last.s_dot * tau, last.s_dot, last.l + last.l_dot * tau, last.l_dot, t};
    return out;
  }
  std::size_t k = 0;
  if (t > xs.front().t) {
    k = static_cast<std::size_t>(std::floor((t - xs.front().t) / traj.dt()));
    k = std::min(k, xs.size() - 2);
    while (k > 0 && xs[k].t > t) --k;
    while (k + 2 < xs.size() && xs[k + 1].t <= t) ++k;
  }
  const auto& a = xs[k];
  const auto& b = xs[k + 1];
  const double h = b.t - a.t;
  const double tau = std::max(0.0, t - a.t);
  out.action = {(b.s_dot - a.s_dot) / h, (b.l_dot - a.l_dot) / h};
  out.state = {a.s + a.s_dot * tau + 0.5 * out.action.s_ddot * tau * tau, a.s_dot + out.action.s_ddot * tau,
               a.l + a.l_dot * tau + 0.5 * out.action.l_ddot * tau * tau, a.l_dot + out.action.l_ddot * tau, t};
  return out;
}

PlantState bicycle_step(const PlantState& plant, double accel, double steer, double dt, const VehicleShape& shape) {
  PlantState out = plant;
  const double v1 = std::max(0.0, plant.v + accel * dt);
  // Well defined when the speed reaches zero inside the step.
  const double dist = (plant.v + accel * dt >= 0.0) ? 0.5 * (plant.v + v1) * dt
                                                    : (accel < 0.0 ? plant.v * plant.v / (-2.0 * accel) : 0.0);
  const double dtheta = dist * std::tan(steer) / shape.wheelbase();
  const double mid = plant.pose.heading + 0.5 * dtheta;
  out.pose.position.x += dist * std::cos(mid);
  out.pose.position.y += dist * std::sin(mid);
  out.pose.heading = wrap_angle(plant.pose.heading + dtheta);
  out.v = v1;
  out.accel_cmd = accel;
  out.steer_cmd = steer;
  return out;
}

std::pair<PlantState, TrackCommands> track_step(const PlantState& plant, const Trajectory& target,
                                               const ReferencePath& path, double t, double dt,
                                               const TrackerGains& gains, const VehicleShape& shape) {
  const auto ref = sample_trajectory(target, t);
  TrackCommands cmd;

  const double v_ref = std::hypot(ref.state.s_dot, ref.state.l_dot);
  const double e = v_ref - plant.v;
  const double d = plant.has_last ? (e - plant.last_error) / dt : 0.0;
  const double ff = gains.feedforward ? ref.action.s_ddot : 0.0;
  const double raw = ff + gains.kp * e + gains.ki * plant.integral + gains.kd * d;
  cmd.accel = std::clamp(raw, gains.a_min, gains.a_max);
  cmd.accel_saturated = cmd.accel != raw;

  const double L = shape.wheelbase();
  const Point2 front{plant.pose.position.x + L * std::cos(plant.pose.heading),
                     plant.pose.position.y + L * std::sin(plant.pose.heading)};
  const auto fp = path.project(front);
  cmd.cross_track = fp.l - ref.state.l;
  double ref_heading = path.heading_at(fp.s);
  if (std::abs(ref.state.s_dot) > 0.1) ref_heading += std::atan2(ref.state.l_dot, ref.state.s_dot);
  cmd.heading_error = wrap_angle(ref_heading - plant.pose.heading);
  const double raw_steer =
      cmd.heading_error - std::atan(gains.k_cross * cmd.cross_track / std::max(plant.v, gains.speed_floor));
  cmd.steer = std::clamp(raw_steer, -gains.steering_limit, gains.steering_limit);
  cmd.steer_saturated = cmd.steer != raw_steer;

  PlantState next = bicycle_step(plant, cmd.accel, cmd.steer, dt, shape);
  next.last_error = e;
  next.has_last = true;
  // Conditional integration: freeze the integrator while saturated.
  next.integral = cmd.accel_saturated ? plant.integral : plant.integral + e * dt;
  return {next, cmd};
}

FrenetState plant_to_frenet(const PlantState& plant, const ReferencePath& path, double t) {
  const auto fp = path.project(plant.pose.position);
  const double rel = wrap_angle(plant.pose.heading - path.heading_at(fp.s));
  return {fp.s, plant.v * std::cos(rel), fp.l, plant.v * std::sin(rel), t};
}

PlantState plant_from_frenet(const FrenetState& x, const ReferencePath& path) {
  PlantState p;
  const auto pose = frenet_to_cartesian(path, x);
  p.pose = pose;
  if (std::abs(x.s_dot) + std::abs(x.l_dot) > 0.0) p.pose.heading = wrap_angle(pose.heading + std::atan2(x.l_dot, x.s_dot));
  p.v = std::hypot(x.s_dot, x.l_dot);
  return p;
}

}  // namespace troublemaker
