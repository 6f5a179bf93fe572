#include "troublemaker/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "troublemaker/errors.hpp"

namespace troublemaker {

namespace {

constexpr double kBoundTol = 1e-9;

bool finite(const FrenetState& x) {
  return std::isfinite(x.s) && std::isfinite(x.s_dot) && std::isfinite(x.l) &&
         std::isfinite(x.l_dot) && std::isfinite(x.t);
}

void check_inputs(const FrenetState& x, const ControlAction& a, double dt) {
  if (!finite(x) || !std::isfinite(a.s_ddot) || !std::isfinite(a.l_ddot)) {
    throw InvalidStateError("non-finite state or action");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidStateError("dt must be positive");
}

}  // namespace

FrenetState step_unclamped(const FrenetState& x, const ControlAction& a, double dt) {
  const double half_dt2 = 0.5 * dt * dt;
  return FrenetState{x.s + dt * x.s_dot + half_dt2 * a.s_ddot, x.s_dot + dt * a.s_ddot,
                     x.l + dt * x.l_dot + half_dt2 * a.l_ddot, x.l_dot + dt * a.l_ddot,
                     x.t + dt};
}

StepResult step(const FrenetState& x, const ControlAction& a, double dt,
                const DynamicsLimits& limits) {
  check_inputs(x, a, dt);
  if (a.s_ddot < limits.a_min - kBoundTol || a.s_ddot > limits.a_max + kBoundTol ||
      a.l_ddot < limits.a_min - kBoundTol || a.l_ddot > limits.a_max + kBoundTol) {
    throw InvalidStateError("action outside [a_min, a_max]");
  }
  if (x.s_dot < -kBoundTol || x.s_dot > limits.v_max + kBoundTol) {
    throw InvalidStateError("speed outside [0, v_max]");
  }

  StepResult out{step_unclamped(x, a, dt), false};
  const double v0 = std::clamp(x.s_dot, 0.0, limits.v_max);
  const double acc = a.s_ddot;
  if (out.state.s_dot < 0.0) {
    // Stops inside the step and stays at rest.
    const double tau = acc < 0.0 ? std::min(dt, v0 / -acc) : 0.0;
    out.state.s = x.s + v0 * tau + 0.5 * acc * tau * tau;
    out.state.s_dot = 0.0;
    out.clamped = true;
  } else if (out.state.s_dot > limits.v_max) {
    const double tau = acc > 0.0 ? std::clamp((limits.v_max - v0) / acc, 0.0, dt) : 0.0;
    out.state.s = x.s + v0 * tau + 0.5 * acc * tau * tau + limits.v_max * (dt - tau);
    out.state.s_dot = limits.v_max;
    out.clamped = true;
  }
  return out;
}

Trajectory::Trajectory(std::vector<FrenetState> states, double dt)
    : states_(std::move(states)), dt_(dt) {
  if (states_.empty()) throw InvalidStateError("trajectory must be non-empty");
  if (!(dt_ > 0.0)) throw InvalidStateError("trajectory dt must be positive");
  for (std::size_t i = 1; i < states_.size(); ++i) {
    const double gap = states_[i].t - states_[i - 1].t;
    if (std::abs(gap - dt_) > 1e-9 * std::max(1.0, std::abs(states_[i].t))) {
      throw InvalidStateError("trajectory time stamps must be spaced by dt");
    }
  }
}

Trajectory Trajectory::shifted(double offset) const {
  auto states = states_;
  for (auto& x : states) x.t += offset;
  Trajectory out;
  out.states_ = std::move(states);
  out.dt_ = dt_;
  return out;
}

RolloutResult rollout_detailed(const FrenetState& x0, std::span<const ControlAction> actions,
                               double dt, const DynamicsLimits& limits) {
  if (actions.empty()) throw InvalidStateError("rollout needs at least one action");
  std::vector<FrenetState> states;
  states.reserve(actions.size() + 1);
  states.push_back(x0);
  bool clamped = false;
  for (const auto& a : actions) {
    auto r = step(states.back(), a, dt, limits);
    clamped = clamped || r.clamped;
    states.push_back(r.state);
  }
  RolloutResult out;
  out.trajectory = Trajectory(std::move(states), dt);
  out.any_clamped = clamped;
  return out;
}

Trajectory rollout(const FrenetState& x0, std::span<const ControlAction> actions, double dt,
                   const DynamicsLimits& limits) {
  return rollout_detailed(x0, actions, dt, limits).trajectory;
}

std::optional<double> crossing_time(const Trajectory& traj, double s_cp) {
  const auto& xs = traj.states();
  if (xs.empty()) return std::nullopt;
  if (xs.front().s >= s_cp) return xs.front().t;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const auto& a = xs[k];
    const auto& b = xs[k + 1];
    if (b.s >= s_cp) {
      const double frac = (s_cp - a.s) / (b.s - a.s);
      return a.t + frac * (b.t - a.t);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

double wrap_angle(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  angle = std::fmod(angle + std::numbers::pi, two_pi);
  if (angle < 0.0) angle += two_pi;
  return angle - std::numbers::pi;
}

namespace {

Pose2 segment_pose(const PathSegment& seg, double u) {
  return std::visit(
      [u](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, LineSegment>) {
          return Pose2{{g.start.x + u * std::cos(g.heading), g.start.y + u * std::sin(g.heading)},
                       g.heading};
        } else {
          const double dir = g.sweep >= 0.0 ? 1.0 : -1.0;
          const double ang = g.start_angle + dir * u / g.radius;
          return Pose2{{g.center.x + g.radius * std::cos(ang), g.center.y + g.radius * std::sin(ang)},
                       wrap_angle(ang + dir * std::numbers::pi / 2.0)};
        }
      },
      seg);
}

// Closest point on one segment: local arc length and distance.
std::pair<double, double> segment_project(const PathSegment& seg, const Point2& p) {
  return std::visit(
      [&p](const auto& g) -> std::pair<double, double> {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, LineSegment>) {
          const double dx = p.x - g.start.x;
          const double dy = p.y - g.start.y;
          const double u =
              std::clamp(dx * std::cos(g.heading) + dy * std::sin(g.heading), 0.0, g.length);
          const double qx = g.start.x + u * std::cos(g.heading) - p.x;
          const double qy = g.start.y + u * std::sin(g.heading) - p.y;
          return {u, std::hypot(qx, qy)};
        } else {
          const double dir = g.sweep >= 0.0 ? 1.0 : -1.0;
          const double ang = std::atan2(p.y - g.center.y, p.x - g.center.x);
          double rel = wrap_angle(ang - g.start_angle) * dir;
          const double span = std::abs(g.sweep);
          // Points behind the arc start wrap to large positive angles; pick the
          // nearer endpoint in that case.
          if (rel < 0.0 || rel > span) {
            const double d0 = std::abs(wrap_angle(rel));
            const double d1 = std::abs(wrap_angle(rel - span));
            rel = d0 <= d1 ? 0.0 : span;
          }
          const double u = rel * g.radius;
          const auto pose = segment_pose(g, u);
          return {u, std::hypot(pose.position.x - p.x, pose.position.y - p.y)};
        }
      },
      seg);
}

}  // namespace

ReferencePath ReferencePath::from_waypoints(std::vector<Point2> waypoints, double lane_width,
                                            std::string tag) {
  if (waypoints.size() < 2) throw InvalidStateError("reference path needs at least 2 waypoints");
  ReferencePath path;
  path.lane_width_ = lane_width;
  path.tag_ = std::move(tag);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const auto& a = waypoints[i];
    const auto& b = waypoints[i + 1];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (!(len > 0.0)) throw InvalidStateError("arc length must be strictly increasing");
    path.segments_.push_back(LineSegment{a, std::atan2(b.y - a.y, b.x - a.x), len});
    total += len;
    path.cumulative_.push_back(total);
  }
  return path;
}

Pose2 ReferencePath::pose_at(double s) const {
  const double len = length();
  if (segments_.empty() || !std::isfinite(s) || s < -1e-9 || s > len + 1e-9) {
    throw OutOfRangeError("arc length " + std::to_string(s) + " outside path range [0, " +
                          std::to_string(len) + "]");
  }
  s = std::clamp(s, 0.0, len);
  const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), s);
  const std::size_t idx =
      std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), segments_.size() - 1);
  const double seg_start = idx == 0 ? 0.0 : cumulative_[idx - 1];
  return segment_pose(segments_[idx], s - seg_start);
}

FrenetPoint ReferencePath::project(const Point2& p) const {
  double best_dist = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto [u, dist] = segment_project(segments_[i], p);
    if (dist < best_dist - 1e-12) {
      best_dist = dist;
      best_s = (i == 0 ? 0.0 : cumulative_[i - 1]) + u;
    }
  }
  const auto pose = pose_at(best_s);
  const double dx = p.x - pose.position.x;
  const double dy = p.y - pose.position.y;
  const double l = -std::sin(pose.heading) * dx + std::cos(pose.heading) * dy;
  return {best_s, l};
}

std::vector<Point2> ReferencePath::sample(double spacing) const {
  std::vector<Point2> pts;
  const double len = length();
  const auto n = static_cast<std::size_t>(std::ceil(len / spacing));
  pts.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    pts.push_back(pose_at(std::min(len, static_cast<double>(i) * spacing)).position);
  }
  return pts;
}

std::vector<std::pair<Point2, double>> ReferencePath::waypoints() const {
  std::vector<std::pair<Point2, double>> out;
  if (segments_.empty()) return out;
  out.emplace_back(pose_at(0.0).position, 0.0);
  for (double c : cumulative_) out.emplace_back(pose_at(c).position, c);
  return out;
}

PathBuilder::PathBuilder(Pose2 start, double lane_width, std::string tag) : cursor_(start) {
  path_.lane_width_ = lane_width;
  path_.tag_ = std::move(tag);
}

PathBuilder& PathBuilder::line(double length) {
  if (!(length > 0.0)) throw InvalidStateError("line length must be positive");
  LineSegment seg{cursor_.position, cursor_.heading, length};
  path_.segments_.push_back(seg);
  path_.cumulative_.push_back(path_.length() + length);
  cursor_ = segment_pose(seg, length);
  return *this;
}

PathBuilder& PathBuilder::arc(double radius, double sweep_rad) {
  if (!(radius > 0.0) || sweep_rad == 0.0) throw InvalidStateError("degenerate arc");
  const double dir = sweep_rad > 0.0 ? 1.0 : -1.0;
  // Center sits on the turn side of the current heading.
  const double normal = cursor_.heading + dir * std::numbers::pi / 2.0;
  ArcSegment seg;
  seg.center = {cursor_.position.x + radius * std::cos(normal),
                cursor_.position.y + radius * std::sin(normal)};
  seg.radius = radius;
  seg.start_angle = std::atan2(cursor_.position.y - seg.center.y, cursor_.position.x - seg.center.x);
  seg.sweep = sweep_rad;
  path_.segments_.push_back(seg);
  const double len = radius * std::abs(sweep_rad);
  path_.cumulative_.push_back(path_.length() + len);
  cursor_ = segment_pose(seg, len);
  return *this;
}

ReferencePath PathBuilder::build() const {
  if (path_.segments_.empty()) throw InvalidStateError("empty path");
  return path_;
}

Pose2 frenet_to_cartesian(const ReferencePath& path, const FrenetState& x) {
  const auto pose = path.pose_at(x.s);
  return Pose2{{pose.position.x - x.l * std::sin(pose.heading),
                pose.position.y + x.l * std::cos(pose.heading)},
               pose.heading};
}

FrenetPoint cartesian_to_frenet(const ReferencePath& path, const Point2& p) {
  return path.project(p);
}

namespace {

std::optional<std::pair<double, double>> segment_intersection(const Point2& p1, const Point2& p2,
                                                              const Point2& q1, const Point2& q2) {
  const double rx = p2.x - p1.x, ry = p2.y - p1.y;
  const double sx = q2.x - q1.x, sy = q2.y - q1.y;
  const double denom = rx * sy - ry * sx;
  if (std::abs(denom) < 1e-14) return std::nullopt;
  const double qpx = q1.x - p1.x, qpy = q1.y - p1.y;
  const double t = (qpx * sy - qpy * sx) / denom;
  const double u = (qpx * ry - qpy * rx) / denom;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return std::make_pair(t, u);
}

}  // namespace

std::optional<ConflictPoint> find_conflict_point(const ReferencePath& a, const ReferencePath& b) {
  constexpr double spacing = 0.5;
  const auto pa = a.sample(spacing);
  const auto pb = b.sample(spacing);
  auto seg_s = [spacing](std::size_t i, double frac, double len) {
    return std::min(len, (static_cast<double>(i) + frac) * spacing);
  };
  for (std::size_t i = 0; i + 1 < pa.size(); ++i) {
    for (std::size_t j = 0; j + 1 < pb.size(); ++j) {
      const auto hit = segment_intersection(pa[i], pa[i + 1], pb[j], pb[j + 1]);
      if (!hit) continue;
      // The last sample interval may be shorter than `spacing`.
      const double a0 = seg_s(i, 0.0, a.length()), a1 = seg_s(i + 1, 0.0, a.length());
      const double b0 = seg_s(j, 0.0, b.length()), b1 = seg_s(j + 1, 0.0, b.length());
      double sa = a0 + hit->first * (a1 - a0);
      double sb = b0 + hit->second * (b1 - b0);
      // Newton refinement of pa(sa) = pb(sb) on the exact geometry.
      for (int it = 0; it < 30; ++it) {
        const auto qa = a.pose_at(sa);
        const auto qb = b.pose_at(sb);
        const double fx = qa.position.x - qb.position.x;
        const double fy = qa.position.y - qb.position.y;
        if (std::hypot(fx, fy) < 1e-13) break;
        const double j11 = std::cos(qa.heading), j12 = -std::cos(qb.heading);
        const double j21 = std::sin(qa.heading), j22 = -std::sin(qb.heading);
        const double det = j11 * j22 - j12 * j21;
        if (std::abs(det) < 1e-12) break;
        sa = std::clamp(sa - (j22 * fx - j12 * fy) / det, 0.0, a.length());
        sb = std::clamp(sb - (-j21 * fx + j11 * fy) / det, 0.0, b.length());
      }
      return ConflictPoint{a.pose_at(sa).position, sa, sb};
    }
  }
  return std::nullopt;
}

}  // namespace troublemaker
