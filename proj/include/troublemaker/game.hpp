#pragma once

// Leader-follower (Stackelberg) interaction game between the adversarial
// object target (leader) and the vehicle under test (follower).
//
// Both actors move on their own reference path; they interact only through
// the conflict point, located at s_cp_leader on the leader path and
// s_cp_follower on the follower path. Separation is expressed in "progress
// past the conflict point" coordinates, s_hat = s - s_cp.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "troublemaker/kinematics.hpp"
#include "troublemaker/risk.hpp"

namespace troublemaker {

enum class Strategy { kRush, kYield };

std::string to_string(Strategy s);

struct GameConfig {
  int N = 10;
  double dt = 0.2;
  double a_min = -4.0;
  double a_max = 2.5;
  double v_max = 8.0;
  double s_safe = 6.0;  // progress gap, m
  double l_safe = 0.0;  // lateral gap, m (used only with lateral_separation)
  bool lateral_separation = false;
  std::array<double, 2> R{1.0, 1.0};
  double delta_max = 10.0;  // deadlock cutoff, s
  int max_outer_iters = 40;
  double tol = 1e-6;
  // SQP runs per strategy from the best-scoring seeds; a warm start adds one
  // run and uses the smaller count.
  int cold_starts = 8;
  int warm_starts = 2;

  // Leader footprint counts as inside the conflict zone while |s_hat| <= this.
  double conflict_half_window = 2.75;
  // Rush requires predicted psi >= margin, yield psi <= -margin.
  double sign_margin = 0.05;
  double tie_tolerance = 1e-4;
  // Speed floor for the constant-velocity tail used to extrapolate arrivals
  // beyond the horizon.
  double tail_speed_floor = 0.1;
  bool allow_rush = true;
  bool allow_yield = true;

  void validate() const;
  DynamicsLimits limits() const { return {a_min, a_max, v_max}; }
};

struct KktCertificate {
  std::vector<double> lambda;  // dynamics multipliers, 4 per step
  std::vector<double> mu;      // inequality multipliers
  double stationarity_residual = 0.0;
  double complementarity_residual = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

enum class SolveStatus { kOptimal, kMaxIter, kInfeasible };
std::string to_string(SolveStatus s);

// Which side of the leader the follower must keep while the leader occupies
// the conflict zone.
enum class FollowerSide {
  kAhead,   // s_hat_F - s_safe - s_hat_L >= 0 (follower passes first)
  kBehind,  // s_hat_L - s_safe - s_hat_F >= 0 (follower yields)
};

struct ConflictCoords {
  double s_cp_leader = 0.0;
  double s_cp_follower = 0.0;
};

struct FollowerResponse {
  std::vector<ControlAction> actions;
  Trajectory trajectory;
  double J_F = 0.0;
  KktCertificate kkt;
  SolveStatus status = SolveStatus::kOptimal;
  double max_slack = 0.0;           // separation violation needed when infeasible
  std::vector<int> active_steps;    // horizon steps carrying separation rows
};

// Convex tracking OCP of the follower against a fixed leader trajectory.
FollowerResponse follower_best_response(const FrenetState& x0_F, const Trajectory& leader_traj,
                                        const Trajectory& ref_F, const GameConfig& cfg,
                                        const ConflictCoords& cp, FollowerSide side,
                                        const std::array<double, 4>& Q = RiskParams{}.Q);

// Horizon references: constant speed along the lane centre starting at x.
Trajectory make_reference(const FrenetState& x, double v_ref, int N, double dt);

// Arrival at s_cp: inside the trajectory if reached, otherwise extrapolated at
// max(final speed, floor).
double predicted_crossing_time(const Trajectory& traj, double s_cp, double speed_floor);

struct LeaderProblem {
  FrenetState x0_L;
  FrenetState x0_F;
  Trajectory ref_L;
  Trajectory ref_F;
  ConflictCoords cp;
  GameConfig cfg;
  RiskParams risk;
  DensityFn density = unit_density;
};

struct LeaderEvaluation {
  Trajectory leader_traj;
  FollowerResponse follower;
  double psi = 0.0;  // predicted signed PET, leader taken as the first actor
  double J_h = 0.0;
  double J_s = 0.0;
  double J_c = 0.0;
  double J_L = 0.0;
  bool sign_ok = false;
  bool dynamics_ok = false;  // speed stayed in [0, v_max] without clamping
  bool feasible() const { return sign_ok && dynamics_ok && follower.status != SolveStatus::kInfeasible; }
};

// Leader cost of a full action sequence under strategy sigma: the follower
// responds through follower_best_response.
LeaderEvaluation evaluate_leader(const LeaderProblem& prob, Strategy sigma,
                                 const std::vector<ControlAction>& leader_actions);

struct GameSolution {
  Strategy sigma_star = Strategy::kRush;
  std::vector<ControlAction> leader_actions;
  std::vector<ControlAction> follower_actions;
  Trajectory leader_traj;
  Trajectory follower_traj;
  double J_L = 0.0;
  double J_F = 0.0;
  double J_h = 0.0;
  double psi = 0.0;
  KktCertificate kkt;
  SolveStatus status = SolveStatus::kOptimal;
  bool no_conflict = false;
  int outer_iterations = 0;
  std::array<double, 2> candidate_costs{0.0, 0.0};  // J_L(rush), J_L(yield)
  std::array<bool, 2> candidate_feasible{false, false};
};

// Single-level solve for one fixed strategy. `warm_start` (longitudinal
// accelerations) seeds the search when given.
GameSolution leader_ocp(const LeaderProblem& prob, Strategy sigma,
                        const std::vector<double>* warm_start = nullptr);

GameSolution stackelberg_solve(const LeaderProblem& prob,
                               const std::vector<double>* warm_start = nullptr);

struct OracleResult {
  Strategy sigma_star = Strategy::kRush;
  std::vector<ControlAction> best_actions;
  double J_L = 0.0;
  std::array<double, 2> best_per_strategy{0.0, 0.0};  // +inf when no feasible point
  std::size_t candidates = 0;
};

// Exhaustive grid search over leader sequences and strategies. Throws
// std::invalid_argument when N > 4 or levels > 5.
OracleResult brute_force_oracle(const LeaderProblem& prob, int levels);

// ---------------------------------------------------------------------------
// Receding-horizon interaction loop.

struct GameSetup {
  ConflictCoords cp;
  double leader_speed_ref = 3.0;
  double follower_speed_ref = 4.0;
};

enum class TerminationReason { kRunning, kPassedCp, kDeadlockCutoff };
std::string to_string(TerminationReason r);

struct FollowerObservation {
  FrenetState follower;
  FrenetState leader;
  ConflictCoords cp;
  double follower_speed_ref = 4.0;
};

class FollowerPolicy {
 public:
  virtual ~FollowerPolicy() = default;
  virtual ControlAction act(const FollowerObservation& obs) = 0;
};

class GameLoop {
 public:
  GameLoop(GameSetup setup, GameConfig cfg, RiskParams risk, DensityFn density = unit_density);

  // Checks termination for the measured states, otherwise solves one
  // receding-horizon game. Returns nullopt once terminated.
  std::optional<GameSolution> step(const FrenetState& leader, const FrenetState& follower);

  bool terminated() const { return reason_ != TerminationReason::kRunning; }
  TerminationReason reason() const { return reason_; }
  int steps() const { return steps_; }
  double elapsed() const { return steps_ * cfg_.dt; }
  const GameConfig& config() const { return cfg_; }
  const GameSetup& setup() const { return setup_; }

 private:
  GameSetup setup_;
  GameConfig cfg_;
  RiskParams risk_;
  DensityFn density_;
  int steps_ = 0;
  TerminationReason reason_ = TerminationReason::kRunning;
  std::vector<double> warm_;
};

struct GameStepRecord {
  FrenetState leader;
  FrenetState follower;
  ControlAction leader_action;
  ControlAction follower_action;
  GameSolution solution;
};

struct InteractionLog {
  std::vector<GameStepRecord> steps;
  TerminationReason reason = TerminationReason::kRunning;
  double elapsed = 0.0;
  FrenetState final_leader;
  FrenetState final_follower;
};

// Plant-free loop: the leader executes the first planned action, the follower
// the policy's action, both through kinematics::step.
InteractionLog run_game_loop(const FrenetState& x0_L, const FrenetState& x0_F,
                             const GameSetup& setup, const GameConfig& cfg,
                             const RiskParams& risk, const DensityFn& density,
                             FollowerPolicy& vut_policy);

}  // namespace troublemaker
