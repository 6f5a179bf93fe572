#pragma once

// Corridor construction (SL and ST), lattice refinement of game states and
// the PID / Stanley tracker on a kinematic bicycle plant.

#include <array>
#include <optional>
#include <vector>

#include "troublemaker/errors.hpp"
#include "troublemaker/kinematics.hpp"

namespace troublemaker {

// All candidates rejected.
class PlanningError : public Error {
 public:
  using Error::Error;
};

struct VehicleShape {
  double length = 3.65;
  double width = 1.55;
  double wheelbase() const { return 0.6 * length; }
};

// Planar polygon, corners in order.
struct Footprint {
  std::vector<Point2> corners;

  static Footprint box(const Pose2& center, double length, double width);
};

struct SlStation {
  double s = 0.0;
  double l_min = 0.0;
  double l_max = 0.0;
  bool blocked = false;
};

struct SlCorridor {
  std::vector<SlStation> stations;

  bool any_blocked() const;
  // Tightest bounds of the stations bracketing s; nullopt when blocked.
  std::optional<std::pair<double, double>> bounds_at(double s) const;
  void validate() const;  // throws InvalidStateError
};

struct CorridorConfig {
  double station_spacing = 0.5;  // m
  VehicleShape ego;
};

SlCorridor build_sl_corridor(const ReferencePath& ref, const std::vector<Footprint>& obstacles,
                             const CorridorConfig& cfg = {});

struct StRect {
  double t0 = 0.0, t1 = 0.0;
  double s0 = 0.0, s1 = 0.0;

  bool contains(double t, double s) const { return t >= t0 && t <= t1 && s >= s0 && s <= s1; }
};

struct StGraph {
  std::vector<StRect> blocked;
  bool occupied(double t, double s) const;
};

// Footprints sampled at common times.
struct ObstaclePrediction {
  std::vector<double> times;
  std::vector<Footprint> footprints;
};

// Only the part of each footprint within half the ego width of the path
// occupies the graph; its station extent is inflated by half the ego length.
// Occupied neighbouring samples block the interval between them.
StGraph build_st_graph(const ReferencePath& ref, const std::vector<ObstaclePrediction>& predictions,
                       const CorridorConfig& cfg = {});

struct LatticeConfig {
  std::vector<double> lateral_offsets{-0.5, -0.25, 0.0, 0.25, 0.5};  // m
  std::vector<double> speed_offsets{-12.0, -6.0, -3.0, -1.5, -0.75, 0.0, 1.0, 2.0, 4.0};  // m/s at the horizon end
  std::array<double, 4> deviation_weights{1.0, 4.0, 1.0, 1.0};      // s, s_dot, l, l_dot
  double jerk_weight = 0.05;
  double lateral_accel_limit = 2.0;  // m/s^2
  int checks_per_segment = 4;        // constraint samples between adjacent states
  DynamicsLimits limits;
};

struct CandidateTrajectory {
  Trajectory trajectory;
  std::vector<ControlAction> actions;
  double cost = 0.0;
  double deviation_cost = 0.0;
};

// Candidates are the game actions plus offset profiles reaching (lateral
// offset, speed offset) at the horizon end, one per lattice pair: a smooth
// lateral ramp and a constant acceleration offset, saturated at the action
// limits and holding the speed within [0, v_max]. Constraints are checked at sub-samples between adjacent states.
CandidateTrajectory sample_and_select(const std::vector<FrenetState>& game_states,
                                      const SlCorridor& corridor, const StGraph& st,
                                      const LatticeConfig& cfg = {});

// Piecewise-constant actions reproducing a double-integrator state sequence.
std::vector<ControlAction> implied_actions(const std::vector<FrenetState>& states);

// Corridor, ST and action-bound check on a finished candidate.
bool candidate_admissible(const CandidateTrajectory& c, const SlCorridor& corridor, const StGraph& st,
                          const LatticeConfig& cfg = {});

struct TrackerGains {
  double kp = 1.2;
  double ki = 0.1;
  double kd = 0.05;
  double k_cross = 2.5;
  double speed_floor = 0.5;     // m/s
  double steering_limit = 0.6;  // rad
  double a_min = -4.0;
  double a_max = 2.5;
  bool feedforward = true;  // add the planned acceleration to the PID term
};

struct PlantState {
  Pose2 pose;  // rear axle
  double v = 0.0;
  double accel_cmd = 0.0;
  double steer_cmd = 0.0;
  // PID memory
  double integral = 0.0;
  double last_error = 0.0;
  bool has_last = false;
};

struct TrackCommands {
  double accel = 0.0;
  double steer = 0.0;
  double cross_track = 0.0;
  double heading_error = 0.0;
  bool accel_saturated = false;
  bool steer_saturated = false;
};

struct ReferenceSample {
  FrenetState state;
  ControlAction action;  // zero past the last sample
};

// Reference at time t from a trajectory with constant actions between its
// samples; held at constant velocity past the end.
ReferenceSample sample_trajectory(const Trajectory& traj, double t);

std::pair<PlantState, TrackCommands> track_step(const PlantState& plant, const Trajectory& target,
                                               const ReferencePath& path, double t, double dt,
                                               const TrackerGains& gains = {},
                                               const VehicleShape& shape = {});

// One kinematic bicycle update with the given commands.
PlantState bicycle_step(const PlantState& plant, double accel, double steer, double dt,
                        const VehicleShape& shape = {});

// Frenet state of the plant relative to its path (s_dot, l_dot from the
// velocity projected on the path frame).
FrenetState plant_to_frenet(const PlantState& plant, const ReferencePath& path, double t);
PlantState plant_from_frenet(const FrenetState& x, const ReferencePath& path);

}  // namespace troublemaker
