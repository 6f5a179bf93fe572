#pragma once

// Frenet-frame actor state, the discrete double-integrator plant and the
// planar reference-path geometry shared by every other module.

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace troublemaker {

struct FrenetState {
  double s = 0.0;      // m, arc position along the own reference path
  double s_dot = 0.0;  // m/s
  double l = 0.0;      // m, left-positive lateral offset
  double l_dot = 0.0;  // m/s
  double t = 0.0;      // s
};

struct ControlAction {
  double s_ddot = 0.0;  // m/s^2
  double l_ddot = 0.0;  // m/s^2
};

struct DynamicsLimits {
  double a_min = -4.0;
  double a_max = 2.5;
  double v_max = 8.0;
};

struct StepResult {
  FrenetState state;
  bool clamped = false;  // s_dot hit 0 or v_max inside the step
};

// x(k+1) = A x(k) + B a(k) with A, B of the constant-acceleration model.
// No clamping; used by the optimizers and for linearity checks.
FrenetState step_unclamped(const FrenetState& x, const ControlAction& a, double dt);

// Plant step. Longitudinal speed is held inside [0, v_max]; when the bound is
// reached mid-step the remainder of the step is integrated at the bound so
// that s stays consistent with the clamped speed.
StepResult step(const FrenetState& x, const ControlAction& a, double dt,
                const DynamicsLimits& limits = {});

class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::vector<FrenetState> states, double dt);

  const std::vector<FrenetState>& states() const { return states_; }
  double dt() const { return dt_; }
  std::size_t size() const { return states_.size(); }
  bool empty() const { return states_.empty(); }
  const FrenetState& operator[](std::size_t i) const { return states_[i]; }
  const FrenetState& front() const { return states_.front(); }
  const FrenetState& back() const { return states_.back(); }

  // Same samples, all time stamps moved by `offset`.
  Trajectory shifted(double offset) const;

 private:
  std::vector<FrenetState> states_;
  double dt_ = 0.0;
};

struct RolloutResult {
  Trajectory trajectory;
  bool any_clamped = false;
};

RolloutResult rollout_detailed(const FrenetState& x0, std::span<const ControlAction> actions,
                               double dt, const DynamicsLimits& limits = {});
Trajectory rollout(const FrenetState& x0, std::span<const ControlAction> actions, double dt,
                   const DynamicsLimits& limits = {});

// First time s(t) >= s_cp, linearly interpolated between samples.
// nullopt means the point is never reached inside the trajectory.
std::optional<double> crossing_time(const Trajectory& traj, double s_cp);

// ---------------------------------------------------------------------------
// Planar geometry

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Pose2 {
  Point2 position;
  double heading = 0.0;  // rad, CCW from +x
};

struct LineSegment {
  Point2 start;
  double heading = 0.0;
  double length = 0.0;
};

struct ArcSegment {
  Point2 center;
  double radius = 0.0;
  double start_angle = 0.0;  // polar angle of the start point about the center
  double sweep = 0.0;        // signed, positive = left turn
};

using PathSegment = std::variant<LineSegment, ArcSegment>;

struct FrenetPoint {
  double s = 0.0;
  double l = 0.0;
};

// Reference path made of line and circular-arc pieces, parameterized by
// exact arc length.
class ReferencePath {
 public:
  ReferencePath() = default;

  // Piecewise-linear path through the given points.
  static ReferencePath from_waypoints(std::vector<Point2> waypoints, double lane_width,
                                      std::string tag = {});

  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  double lane_width() const { return lane_width_; }
  const std::string& tag() const { return tag_; }
  const std::vector<PathSegment>& segments() const { return segments_; }

  // Pose of the centerline at arc length s. Throws OutOfRangeError outside [0, length].
  Pose2 pose_at(double s) const;
  double heading_at(double s) const { return pose_at(s).heading; }

  // Closest centerline point; s clamped to the path range.
  FrenetPoint project(const Point2& p) const;

  // Points every `spacing` metres, always including both ends.
  std::vector<Point2> sample(double spacing) const;
  // Waypoints with their cumulative arc length.
  std::vector<std::pair<Point2, double>> waypoints() const;

 private:
  friend class PathBuilder;
  std::vector<PathSegment> segments_;
  std::vector<double> cumulative_;  // arc length at the end of each segment
  double lane_width_ = 3.5;
  std::string tag_;
};

class PathBuilder {
 public:
  PathBuilder(Pose2 start, double lane_width, std::string tag = {});
  PathBuilder& line(double length);
  // Positive sweep turns left.
  PathBuilder& arc(double radius, double sweep_rad);
  ReferencePath build() const;

 private:
  Pose2 cursor_;
  ReferencePath path_;
};

Pose2 frenet_to_cartesian(const ReferencePath& path, const FrenetState& x);
FrenetPoint cartesian_to_frenet(const ReferencePath& path, const Point2& p);

struct ConflictPoint {
  Point2 position;
  double s_on_path_A = 0.0;
  double s_on_path_B = 0.0;
};

// First crossing of B by A, ordered along A. nullopt for non-intersecting paths.
std::optional<ConflictPoint> find_conflict_point(const ReferencePath& a, const ReferencePath& b);

double wrap_angle(double angle);

}  // namespace troublemaker
