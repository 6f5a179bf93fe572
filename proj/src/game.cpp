#include "troublemaker/game.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "troublemaker/errors.hpp"
#include "troublemaker/qp.hpp"

namespace troublemaker {

std::string to_string(Strategy s) { return s == Strategy::kRush ? "rush" : "yield"; }

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kMaxIter: return "max-iter";
    case SolveStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

std::string to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::kRunning: return "running";
    case TerminationReason::kPassedCp: return "passed-cp";
    case TerminationReason::kDeadlockCutoff: return "deadlock-cutoff";
  }
  return "unknown";
}

void GameConfig::validate() const {
  if (N < 1) throw ConfigError("game: N must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("game: dt must be positive");
  if (!(a_min < a_max)) throw ConfigError("game: a_min must be below a_max");
  if (!(v_max > 0.0)) throw ConfigError("game: v_max must be positive");
  if (!(delta_max > 0.0)) throw ConfigError("game: delta_max must be positive");
  if (!(tol > 0.0)) throw ConfigError("game: tol must be positive");
  if (max_outer_iters < 1) throw ConfigError("game: max_outer_iters must be >= 1");
  if (cold_starts < 1 || warm_starts < 0) throw ConfigError("game: cold_starts must be >= 1, warm_starts >= 0");
  if (s_safe < 0.0) throw ConfigError("game: s_safe must be non-negative");
  if (R[0] < 0.0 || R[1] < 0.0) throw ConfigError("game: R must be non-negative");
  if (!(conflict_half_window > 0.0)) throw ConfigError("game: conflict window must be positive");
  if (sign_margin < 0.0) throw ConfigError("game: sign margin must be non-negative");
  if (!(tail_speed_floor > 0.0)) throw ConfigError("game: tail speed floor must be positive");
  if (!allow_rush && !allow_yield) throw ConfigError("game: no strategy allowed");
}

Trajectory make_reference(const FrenetState& x, double v_ref, int N, double dt) {
  std::vector<FrenetState> out;
  out.reserve(static_cast<std::size_t>(N) + 1);
  for (int k = 0; k <= N; ++k) {
    out.push_back({x.s + v_ref * k * dt, v_ref, 0.0, 0.0, x.t + k * dt});
  }
  return Trajectory(std::move(out), dt);
}

namespace {

constexpr double kElasticPenalty = 1e5;
constexpr double kSignPenalty = 1e3;
constexpr double kSlackPenalty = 1e3;

// Arrival at s_cp for samples s[0..n) at t0 + k dt, with a constant-velocity
// tail after the last sample. Same interpolation as crossing_time.
double arrival_time(double t0, double dt, const double* s, int n, double v_last, double s_cp,
                    double floor) {
  if (s[0] >= s_cp) return t0;
  for (int k = 0; k + 1 < n; ++k) {
    if (s[k + 1] >= s_cp) {
      const double frac = (s_cp - s[k]) / (s[k + 1] - s[k]);
      return t0 + (k + frac) * dt;
    }
  }
  return t0 + (n - 1) * dt + (s_cp - s[n - 1]) / std::max(v_last, floor);
}

// Condensed double integrator for one axis over N steps:
//   p = p0 + k dt v0 + P u,  v = v0 + V u   (k = 1..N)
struct Channel {
  int N = 0;
  double dt = 0.0;
  Eigen::MatrixXd P;
  Eigen::MatrixXd V;

  Channel(int n, double h) : N(n), dt(h), P(Eigen::MatrixXd::Zero(n, n)), V(Eigen::MatrixXd::Zero(n, n)) {
    for (int k = 1; k <= N; ++k) {
      for (int j = 0; j < k; ++j) {
        P(k - 1, j) = dt * dt * (k - j - 0.5);
        V(k - 1, j) = dt;
      }
    }
  }
  Eigen::VectorXd free_p(double p0, double v0) const {
    Eigen::VectorXd out(N);
    for (int k = 1; k <= N; ++k) out[k - 1] = p0 + k * dt * v0;
    return out;
  }
};

// coef * x_k[comp] <= rhs, comp 0 = position, 1 = velocity, k in 1..N.
struct StateRow {
  int k = 1;
  int comp = 0;
  double coef = 1.0;
  double rhs = 0.0;
  bool soft = false;
};

struct ChannelSpec {
  double p0 = 0.0;
  double v0 = 0.0;
  Eigen::VectorXd p_ref;
  Eigen::VectorXd v_ref;
  double q_p = 0.0;
  double q_v = 0.0;
  double r = 0.0;
  double u_lo = 0.0;
  double u_hi = 0.0;
  std::vector<StateRow> rows;
};

struct ChannelSolution {
  Eigen::VectorXd u, p, v;
  Eigen::VectorXd mu;  // [u <= hi (N), -u <= -lo (N), rows]
  bool hard_ok = true;
  bool solved = true;
  double slack_sum = 0.0;
  double max_slack = 0.0;
  std::vector<double> lambda_p, lambda_v;
  double stationarity = 0.0;
  double complementarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
};

ChannelSolution solve_channel(const Channel& ch, const ChannelSpec& spec, bool certify) {
  const int N = ch.N;
  const Eigen::VectorXd pf = ch.free_p(spec.p0, spec.v0);
  const Eigen::VectorXd vf = Eigen::VectorXd::Constant(N, spec.v0);

  QpProblem qp;
  qp.H = 2.0 * (spec.q_p * ch.P.transpose() * ch.P + spec.q_v * ch.V.transpose() * ch.V);
  qp.H.diagonal().array() += 2.0 * spec.r + 1e-12;
  qp.f = 2.0 * (spec.q_p * ch.P.transpose() * (pf - spec.p_ref) +
                spec.q_v * ch.V.transpose() * (vf - spec.v_ref));

  const int nr = static_cast<int>(spec.rows.size());
  const int m = 2 * N + nr;
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, N);
  Eigen::VectorXd h(m);
  G.topRows(N).setIdentity();
  h.head(N).setConstant(spec.u_hi);
  G.middleRows(N, N) = -Eigen::MatrixXd::Identity(N, N);
  h.segment(N, N).setConstant(-spec.u_lo);
  for (int i = 0; i < nr; ++i) {
    const auto& row = spec.rows[i];
    const Eigen::MatrixXd& M = row.comp == 0 ? ch.P : ch.V;
    const double free = row.comp == 0 ? pf[row.k - 1] : vf[row.k - 1];
    G.row(2 * N + i) = row.coef * M.row(row.k - 1);
    h[2 * N + i] = row.rhs - row.coef * free;
  }
  qp.A.resize(0, N);
  qp.b.resize(0);
  qp.G = G;
  qp.h = h;

  QpSettings settings;
  settings.tol = 1e-10;
  settings.polish = certify;
  QpResult res = solve_qp(qp, settings);

  ChannelSolution out;
  Eigen::VectorXd mu;
  if (res.status == QpStatus::kOptimal) {
    out.u = res.x;
    mu = res.mu;
  } else {
    out.hard_ok = false;
    std::vector<int> soft_idx;
    for (int i = 0; i < nr; ++i) {
      if (spec.rows[i].soft) soft_idx.push_back(i);
    }
    const int ns = static_cast<int>(soft_idx.size());
    QpProblem el;
    el.H = Eigen::MatrixXd::Zero(N + ns, N + ns);
    el.H.topLeftCorner(N, N) = qp.H;
    el.H.diagonal().tail(ns).setConstant(1e-6);
    el.f = Eigen::VectorXd::Zero(N + ns);
    el.f.head(N) = qp.f;
    el.f.tail(ns).setConstant(kElasticPenalty);
    el.G = Eigen::MatrixXd::Zero(m + ns, N + ns);
    el.G.topLeftCorner(m, N) = G;
    el.h = Eigen::VectorXd::Zero(m + ns);
    el.h.head(m) = h;
    for (int j = 0; j < ns; ++j) {
      el.G(2 * N + soft_idx[j], N + j) = -1.0;
      el.G(m + j, N + j) = -1.0;
    }
    el.A.resize(0, N + ns);
    el.b.resize(0);
    QpResult er = solve_qp(el, settings);
    if (er.status != QpStatus::kOptimal) {
      out.solved = false;
      // Hold current speed as a last resort; callers see the infeasible flag.
      out.u = Eigen::VectorXd::Zero(N);
      mu = Eigen::VectorXd::Zero(m);
      out.slack_sum = std::numeric_limits<double>::infinity();
      out.max_slack = std::numeric_limits<double>::infinity();
    } else {
      out.u = er.x.head(N);
      mu = er.mu.head(m);
      for (int j = 0; j < ns; ++j) {
        const double e = std::max(0.0, er.x[N + j]);
        out.slack_sum += e;
        out.max_slack = std::max(out.max_slack, e);
      }
    }
  }
  out.u = out.u.cwiseMax(spec.u_lo).cwiseMin(spec.u_hi);
  out.p = pf + ch.P * out.u;
  out.v = vf + ch.V * out.u;
  out.mu = mu;
  if (!certify) return out;

  // Costate recursion for the dynamics multipliers, then the remaining
  // stationarity residual in u.
  std::vector<double> gp(N, 0.0), gv(N, 0.0);
  for (int i = 0; i < nr; ++i) {
    const auto& row = spec.rows[i];
    (row.comp == 0 ? gp : gv)[row.k - 1] += mu[2 * N + i] * row.coef;
  }
  out.lambda_p.assign(N, 0.0);
  out.lambda_v.assign(N, 0.0);
  double next_p = 0.0, next_v = 0.0;
  for (int k = N; k >= 1; --k) {
    const double grad_p = 2.0 * spec.q_p * (out.p[k - 1] - spec.p_ref[k - 1]);
    const double grad_v = 2.0 * spec.q_v * (out.v[k - 1] - spec.v_ref[k - 1]);
    const double lp = next_p - grad_p - gp[k - 1];
    const double lv = ch.dt * next_p + next_v - grad_v - gv[k - 1];
    out.lambda_p[k - 1] = lp;
    out.lambda_v[k - 1] = lv;
    next_p = lp;
    next_v = lv;
  }
  const double bp = 0.5 * ch.dt * ch.dt, bv = ch.dt;
  for (int j = 0; j < N; ++j) {
    const double st = 2.0 * spec.r * out.u[j] - (bp * out.lambda_p[j] + bv * out.lambda_v[j]) +
                      mu[j] - mu[N + j];
    out.stationarity = std::max(out.stationarity, std::abs(st));
  }
  const Eigen::VectorXd gap = h - G * out.u;
  for (int i = 0; i < m; ++i) {
    const bool soft = i >= 2 * N && spec.rows[i - 2 * N].soft;
    const double viol = std::max(0.0, -gap[i]);
    if (!soft) out.primal = std::max(out.primal, viol);
    out.dual = std::max(out.dual, std::max(0.0, -mu[i]));
    out.complementarity = std::max(out.complementarity, std::abs(mu[i] * gap[i]));
  }
  return out;
}

FrenetState clip_speed(FrenetState x, double v_max) {
  constexpr double tol = 1e-6;
  if (!(x.s_dot >= -tol && x.s_dot <= v_max + tol)) {
    throw InvalidStateError("initial speed outside [0, v_max]");
  }
  x.s_dot = std::clamp(x.s_dot, 0.0, v_max);
  return x;
}

void check_horizon(const Trajectory& traj, const GameConfig& cfg, const char* what) {
  if (traj.size() < static_cast<std::size_t>(cfg.N) + 1) {
    throw InvalidStateError(std::string(what) + " shorter than N+1 states");
  }
  if (std::abs(traj.dt() - cfg.dt) > 1e-12) {
    throw InvalidStateError(std::string(what) + " dt differs from game dt");
  }
}

std::vector<StateRow> separation_rows(const std::vector<double>& leader_s, const GameConfig& cfg,
                                      const ConflictCoords& cp, FollowerSide side,
                                      std::vector<int>* active) {
  std::vector<StateRow> rows;
  for (int k = 1; k <= cfg.N; ++k) {
    const double sh_L = leader_s[k] - cp.s_cp_leader;
    if (std::abs(sh_L) > cfg.conflict_half_window) continue;
    if (active) active->push_back(k);
    StateRow row;
    row.k = k;
    row.comp = 0;
    row.soft = true;
    if (side == FollowerSide::kAhead) {
      row.coef = -1.0;
      row.rhs = -(cp.s_cp_follower + sh_L + cfg.s_safe);
    } else {
      row.coef = 1.0;
      row.rhs = cp.s_cp_follower + sh_L - cfg.s_safe;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<StateRow> speed_rows(const GameConfig& cfg) {
  std::vector<StateRow> rows;
  for (int k = 1; k <= cfg.N; ++k) {
    rows.push_back({k, 1, 1.0, cfg.v_max, false});
    rows.push_back({k, 1, -1.0, 0.0, false});
  }
  return rows;
}

ChannelSpec longitudinal_spec(const FrenetState& x0, const Trajectory& ref, const GameConfig& cfg,
                              double q_p, double q_v, double r) {
  ChannelSpec spec;
  spec.p0 = x0.s;
  spec.v0 = x0.s_dot;
  spec.p_ref.resize(cfg.N);
  spec.v_ref.resize(cfg.N);
  for (int k = 1; k <= cfg.N; ++k) {
    spec.p_ref[k - 1] = ref[k].s;
    spec.v_ref[k - 1] = ref[k].s_dot;
  }
  spec.q_p = q_p;
  spec.q_v = q_v;
  spec.r = r;
  spec.u_lo = cfg.a_min;
  spec.u_hi = cfg.a_max;
  spec.rows = speed_rows(cfg);
  return spec;
}

ChannelSpec lateral_spec(const FrenetState& x0, const Trajectory& ref, const GameConfig& cfg,
                         double q_p, double q_v, double r) {
  ChannelSpec spec;
  spec.p0 = x0.l;
  spec.v0 = x0.l_dot;
  spec.p_ref.resize(cfg.N);
  spec.v_ref.resize(cfg.N);
  for (int k = 1; k <= cfg.N; ++k) {
    spec.p_ref[k - 1] = ref[k].l;
    spec.v_ref[k - 1] = ref[k].l_dot;
  }
  spec.q_p = q_p;
  spec.q_v = q_v;
  spec.r = r;
  spec.u_lo = cfg.a_min;
  spec.u_hi = cfg.a_max;
  return spec;
}

Trajectory assemble(const FrenetState& x0, const std::vector<ControlAction>& actions, double dt) {
  std::vector<FrenetState> xs;
  xs.reserve(actions.size() + 1);
  xs.push_back(x0);
  for (const auto& a : actions) xs.push_back(step_unclamped(xs.back(), a, dt));
  return Trajectory(std::move(xs), dt);
}

std::vector<ControlAction> combine(const Eigen::VectorXd& lon, const Eigen::VectorXd& lat) {
  std::vector<ControlAction> out(static_cast<std::size_t>(lon.size()));
  for (Eigen::Index k = 0; k < lon.size(); ++k) out[k] = {lon[k], lat[k]};
  return out;
}

FollowerResponse follower_solve(const FrenetState& x0_in, const Trajectory& leader_traj,
                                const Trajectory& ref_F, const GameConfig& cfg,
                                const ConflictCoords& cp, FollowerSide side,
                                const std::array<double, 4>& Q, bool separation) {
  cfg.validate();
  check_horizon(leader_traj, cfg, "leader trajectory");
  check_horizon(ref_F, cfg, "follower reference");
  const FrenetState x0 = clip_speed(x0_in, cfg.v_max);
  const Channel ch(cfg.N, cfg.dt);

  FollowerResponse out;
  ChannelSpec lon = longitudinal_spec(x0, ref_F, cfg, Q[0], Q[1], cfg.R[0]);
  if (separation) {
    std::vector<double> ls(cfg.N + 1);
    for (int k = 0; k <= cfg.N; ++k) ls[k] = leader_traj[k].s;
    auto rows = separation_rows(ls, cfg, cp, side, &out.active_steps);
    lon.rows.insert(lon.rows.end(), rows.begin(), rows.end());
  }
  ChannelSpec lat = lateral_spec(x0, ref_F, cfg, Q[2], Q[3], cfg.R[1]);
  if (separation && cfg.lateral_separation) {
    for (int k : out.active_steps) {
      lat.rows.push_back({k, 0, -1.0, -(leader_traj[k].l + cfg.l_safe), true});
    }
  }
  const ChannelSolution a = solve_channel(ch, lon, true);
  const ChannelSolution b = solve_channel(ch, lat, true);

  out.actions = combine(a.u, b.u);
  out.trajectory = assemble(x0, out.actions, cfg.dt);
  Trajectory ref_head(std::vector<FrenetState>(ref_F.states().begin(),
                                               ref_F.states().begin() + cfg.N + 1),
                      cfg.dt);
  out.J_F = compliance_cost(out.trajectory, ref_head, Q) + smoothness_cost(out.actions, cfg.R);

  auto& kkt = out.kkt;
  kkt.lambda.reserve(4 * cfg.N);
  for (int k = 0; k < cfg.N; ++k) {
    kkt.lambda.insert(kkt.lambda.end(),
                      {a.lambda_p[k], a.lambda_v[k], b.lambda_p[k], b.lambda_v[k]});
  }
  kkt.mu.assign(a.mu.data(), a.mu.data() + a.mu.size());
  kkt.mu.insert(kkt.mu.end(), b.mu.data(), b.mu.data() + b.mu.size());
  kkt.stationarity_residual = std::max(a.stationarity, b.stationarity);
  kkt.complementarity_residual = std::max(a.complementarity, b.complementarity);
  kkt.primal_residual = std::max(a.primal, b.primal);
  kkt.dual_residual = std::max(a.dual, b.dual);
  out.max_slack = std::max(a.max_slack, b.max_slack);
  const bool ok = a.solved && b.solved && out.max_slack <= 1e-7;
  out.status = ok ? SolveStatus::kOptimal : SolveStatus::kInfeasible;
  return out;
}

FollowerSide side_for(Strategy sigma) {
  return sigma == Strategy::kRush ? FollowerSide::kBehind : FollowerSide::kAhead;
}

double sign_of(Strategy sigma) { return sigma == Strategy::kRush ? 1.0 : -1.0; }

double game_hazard(double psi, const LeaderProblem& prob) {
  // The density is over the trial convention (follower as first actor).
  const DensityFn& d = prob.density;
  const double p = d ? d(-psi) : 1.0;
  return prob.cfg.N * hazard_quadratic(psi, prob.risk, [p](double) { return p; });
}

// Longitudinal part of the leader problem as a function of the leader's
// longitudinal accelerations; the follower responds through its own QP.
class LeaderLongitudinal {
 public:
  struct Eval {
    double F = 0.0;  // utility plus follower-slack penalty
    double psi = 0.0;
    double viol = 0.0;
    double merit = 0.0;
  };

  LeaderLongitudinal(const LeaderProblem& prob, Strategy sigma)
      : prob_(prob),
        cfg_(prob.cfg),
        sigma_(sigma),
        ch_(prob.cfg.N, prob.cfg.dt),
        x0L_(clip_speed(prob.x0_L, prob.cfg.v_max)),
        x0F_(clip_speed(prob.x0_F, prob.cfg.v_max)) {
    const int N = cfg_.N;
    pfL_ = ch_.free_p(x0L_.s, x0L_.s_dot);
    follower_ = longitudinal_spec(x0F_, prob.ref_F, cfg_, prob.risk.Q[0], prob.risk.Q[1], cfg_.R[0]);
    base_rows_ = follower_.rows.size();
    refs_.resize(N + 1);
    vrefs_.resize(N + 1);
    for (int k = 0; k <= N; ++k) {
      refs_[k] = prob.ref_L[k].s;
      vrefs_[k] = prob.ref_L[k].s_dot;
    }
    const auto& r = prob.risk;
    Hq_ = 2.0 * r.omega_c * (r.Q[0] * ch_.P.transpose() * ch_.P + r.Q[1] * ch_.V.transpose() * ch_.V);
    Hq_.diagonal().array() += 2.0 * r.omega_s * cfg_.R[0];
  }

  const Eigen::MatrixXd& quadratic_hessian() const { return Hq_; }
  const Channel& channel() const { return ch_; }
  double v0() const { return x0L_.s_dot; }

  Eval eval(const Eigen::VectorXd& u) {
    ++evals_;
    const int N = cfg_.N;
    const Eigen::VectorXd p = pfL_ + ch_.P * u;
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(N, x0L_.s_dot) + ch_.V * u;
    std::vector<double> s(N + 1);
    s[0] = x0L_.s;
    for (int k = 1; k <= N; ++k) s[k] = p[k - 1];

    follower_.rows.resize(base_rows_);
    auto sep = separation_rows(s, cfg_, prob_.cp, side_for(sigma_), nullptr);
    follower_.rows.insert(follower_.rows.end(), sep.begin(), sep.end());
    const ChannelSolution f = solve_channel(ch_, follower_, false);
    std::vector<double> sf(N + 1);
    sf[0] = x0F_.s;
    for (int k = 1; k <= N; ++k) sf[k] = f.p[k - 1];

    const double tL = arrival_time(x0L_.t, cfg_.dt, s.data(), N + 1, v[N - 1],
                                   prob_.cp.s_cp_leader, cfg_.tail_speed_floor);
    const double tF = arrival_time(x0F_.t, cfg_.dt, sf.data(), N + 1, f.v[N - 1],
                                   prob_.cp.s_cp_follower, cfg_.tail_speed_floor);
    Eval e;
    e.psi = signed_pet_from_times(tL, tF).psi;
    const auto& r = prob_.risk;
    double js = 0.0, jc = 0.0;
    for (int k = 0; k < N; ++k) js += cfg_.R[0] * u[k] * u[k];
    {
      const double ds = x0L_.s - refs_[0], dv = x0L_.s_dot - vrefs_[0];
      jc += r.Q[0] * ds * ds + r.Q[1] * dv * dv;
    }
    for (int k = 1; k <= N; ++k) {
      const double ds = p[k - 1] - refs_[k], dv = v[k - 1] - vrefs_[k];
      jc += r.Q[0] * ds * ds + r.Q[1] * dv * dv;
    }
    const double jh = game_hazard(e.psi, prob_);
    e.F = r.omega_h * jh + r.omega_s * js + r.omega_c * jc + kSlackPenalty * f.slack_sum;
    e.viol = std::max(0.0, cfg_.sign_margin - sign_of(sigma_) * e.psi);
    e.merit = e.F + kSignPenalty * e.viol;
    return e;
  }

  int evals() const { return evals_; }
  Strategy sigma() const { return sigma_; }

 private:
  const LeaderProblem& prob_;
  const GameConfig& cfg_;
  Strategy sigma_;
  Channel ch_;
  FrenetState x0L_, x0F_;
  Eigen::VectorXd pfL_;
  ChannelSpec follower_;
  std::size_t base_rows_ = 0;
  std::vector<double> refs_, vrefs_;
  Eigen::MatrixXd Hq_;
  int evals_ = 0;
};

// Speed-feasible projection of an acceleration sequence.
Eigen::VectorXd project_speed(Eigen::VectorXd u, double v0, const GameConfig& cfg) {
  double v = v0;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    const double lo = std::max(cfg.a_min, -v / cfg.dt);
    const double hi = std::min(cfg.a_max, (cfg.v_max - v) / cfg.dt);
    u[k] = std::clamp(u[k], lo, std::max(lo, hi));
    v = std::clamp(v + cfg.dt * u[k], 0.0, cfg.v_max);
  }
  return u;
}

struct SqpOutcome {
  Eigen::VectorXd u;
  LeaderLongitudinal::Eval e;
  int iterations = 0;
  bool converged = false;
};

SqpOutcome run_sqp(LeaderLongitudinal& obj, Eigen::VectorXd u, const GameConfig& cfg) {
  const int N = cfg.N;
  const Channel& ch = obj.channel();
  const double v0 = obj.v0();
  const double fd = 1e-4;
  const double sg = sign_of(obj.sigma());

  SqpOutcome out;
  out.u = u;
  out.e = obj.eval(u);
  Eigen::MatrixXd B = obj.quadratic_hessian();
  B.diagonal().array() += 1e-6;
  double radius = 1.0;
  const double radius_max = cfg.a_max - cfg.a_min;

  auto gradients = [&](const Eigen::VectorXd& x, Eigen::VectorXd& gF, Eigen::VectorXd& gpsi) {
    gF.resize(N);
    gpsi.resize(N);
    Eigen::VectorXd y = x;
    for (int i = 0; i < N; ++i) {
      y[i] = x[i] + fd;
      const auto ep = obj.eval(y);
      y[i] = x[i] - fd;
      const auto em = obj.eval(y);
      y[i] = x[i];
      gF[i] = (ep.F - em.F) / (2.0 * fd);
      gpsi[i] = (ep.psi - em.psi) / (2.0 * fd);
    }
  };

  Eigen::VectorXd gF, gpsi;
  gradients(out.u, gF, gpsi);
  for (int it = 0; it < cfg.max_outer_iters; ++it) {
    out.iterations = it + 1;
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(N, v0) + ch.V * out.u;

    QpProblem qp;
    qp.H = Eigen::MatrixXd::Zero(N + 1, N + 1);
    qp.H.topLeftCorner(N, N) = B;
    qp.H(N, N) = 1e-8;
    qp.f = Eigen::VectorXd::Zero(N + 1);
    qp.f.head(N) = gF;
    qp.f[N] = kSignPenalty;
    const int m = 4 * N + 2;
    qp.G = Eigen::MatrixXd::Zero(m, N + 1);
    qp.h = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < N; ++i) {
      qp.G(i, i) = 1.0;
      qp.h[i] = std::max(0.0, std::min(cfg.a_max - out.u[i], radius));
      qp.G(N + i, i) = -1.0;
      qp.h[N + i] = std::max(0.0, std::min(out.u[i] - cfg.a_min, radius));
    }
    qp.G.block(2 * N, 0, N, N) = ch.V;
    qp.h.segment(2 * N, N) = (Eigen::VectorXd::Constant(N, cfg.v_max) - v).cwiseMax(0.0);
    qp.G.block(3 * N, 0, N, N) = -ch.V;
    qp.h.segment(3 * N, N) = v.cwiseMax(0.0);
    // sg (psi + gpsi d) + t >= margin
    qp.G.block(4 * N, 0, 1, N) = -sg * gpsi.transpose();
    qp.G(4 * N, N) = -1.0;
    qp.h[4 * N] = sg * out.e.psi - cfg.sign_margin;
    qp.G(4 * N + 1, N) = -1.0;
    qp.A.resize(0, N + 1);
    qp.b.resize(0);
    QpSettings qs;
    qs.tol = 1e-9;
    qs.polish = false;
    const QpResult r = solve_qp(qp, qs);
    if (r.status != QpStatus::kOptimal) break;
    const Eigen::VectorXd d = r.x.head(N);
    const double t = std::max(0.0, r.x[N]);
    const double pred = -(0.5 * d.dot(B * d) + gF.dot(d)) + kSignPenalty * (out.e.viol - t);
    const double step_norm = d.cwiseAbs().maxCoeff();
    if (pred <= 1e-10 || step_norm < 1e-7) {
      out.converged = true;
      break;
    }
    const Eigen::VectorXd u_new = project_speed(out.u + d, v0, cfg);
    const auto e_new = obj.eval(u_new);
    const double ared = out.e.merit - e_new.merit;
    if (ared >= 0.1 * pred) {
      Eigen::VectorXd gF_new, gpsi_new;
      gradients(u_new, gF_new, gpsi_new);
      const Eigen::VectorXd s = u_new - out.u;
      Eigen::VectorXd y = gF_new - gF;
      // Powell-damped BFGS keeps B positive definite.
      const Eigen::VectorXd Bs = B * s;
      const double sBs = s.dot(Bs);
      const double sy = s.dot(y);
      if (sBs > 1e-14) {
        if (sy < 0.2 * sBs) {
          const double theta = 0.8 * sBs / (sBs - sy);
          y = theta * y + (1.0 - theta) * Bs;
        }
        const double sy2 = s.dot(y);
        if (sy2 > 1e-14) B += y * y.transpose() / sy2 - Bs * Bs.transpose() / sBs;
      }
      out.u = u_new;
      out.e = e_new;
      gF = gF_new;
      gpsi = gpsi_new;
      if (step_norm >= 0.9 * radius) radius = std::min(2.0 * radius, radius_max);
      if (step_norm < 1e-6) {
        out.converged = true;
        break;
      }
    } else {
      radius = 0.25 * step_norm;
      if (radius < 1e-6) {
        out.converged = true;
        break;
      }
    }
  }
  return out;
}

// Compass search on the merit, started from the SQP result.
void polish_compass(LeaderLongitudinal& obj, SqpOutcome& best, const GameConfig& cfg, int budget) {
  const int N = cfg.N;
  double h = 0.1;
  int used = 0;
  while (h >= 1e-4 && used < budget) {
    bool improved = false;
    for (int i = 0; i < N && used < budget; ++i) {
      for (double dir : {1.0, -1.0}) {
        Eigen::VectorXd y = best.u;
        y[i] = std::clamp(y[i] + dir * h, cfg.a_min, cfg.a_max);
        y = project_speed(y, obj.v0(), cfg);
        if ((y - best.u).cwiseAbs().maxCoeff() < 1e-12) continue;
        const auto e = obj.eval(y);
        ++used;
        if (e.merit < best.e.merit - 1e-12) {
          best.u = y;
          best.e = e;
          improved = true;
          break;
        }
      }
    }
    if (!improved) h *= 0.5;
  }
}

GameSolution package(const LeaderProblem& prob, Strategy sigma, const LeaderEvaluation& ev,
                     const std::vector<ControlAction>& actions) {
  GameSolution sol;
  sol.sigma_star = sigma;
  sol.leader_actions = actions;
  sol.follower_actions = ev.follower.actions;
  sol.leader_traj = ev.leader_traj;
  sol.follower_traj = ev.follower.trajectory;
  sol.J_L = ev.J_L;
  sol.J_F = ev.follower.J_F;
  sol.J_h = ev.J_h;
  sol.psi = ev.psi;
  sol.kkt = ev.follower.kkt;
  (void)prob;
  return sol;
}

Eigen::VectorXd leader_lateral(const LeaderProblem& prob) {
  const auto& r = prob.risk;
  const Channel ch(prob.cfg.N, prob.cfg.dt);
  ChannelSpec spec = lateral_spec(prob.x0_L, prob.ref_L, prob.cfg, r.omega_c * r.Q[2],
                                  r.omega_c * r.Q[3], r.omega_s * prob.cfg.R[1]);
  return solve_channel(ch, spec, false).u;
}

}  // namespace

FollowerResponse follower_best_response(const FrenetState& x0_F, const Trajectory& leader_traj,
                                        const Trajectory& ref_F, const GameConfig& cfg,
                                        const ConflictCoords& cp, FollowerSide side,
                                        const std::array<double, 4>& Q) {
  return follower_solve(x0_F, leader_traj, ref_F, cfg, cp, side, Q, true);
}

double predicted_crossing_time(const Trajectory& traj, double s_cp, double speed_floor) {
  if (auto t = crossing_time(traj, s_cp)) return *t;
  const auto& b = traj.back();
  return b.t + (s_cp - b.s) / std::max(b.s_dot, speed_floor);
}

LeaderEvaluation evaluate_leader(const LeaderProblem& prob, Strategy sigma,
                                 const std::vector<ControlAction>& leader_actions) {
  const auto& cfg = prob.cfg;
  if (leader_actions.size() != static_cast<std::size_t>(cfg.N)) {
    throw InvalidStateError("leader action sequence must have N entries");
  }
  LeaderEvaluation ev;
  const FrenetState x0L = clip_speed(prob.x0_L, cfg.v_max);
  ev.leader_traj = assemble(x0L, leader_actions, cfg.dt);
  ev.dynamics_ok = true;
  for (const auto& a : leader_actions) {
    for (double c : {a.s_ddot, a.l_ddot}) {
      if (c < cfg.a_min - 1e-9 || c > cfg.a_max + 1e-9) ev.dynamics_ok = false;
    }
  }
  for (const auto& x : ev.leader_traj.states()) {
    if (x.s_dot < -1e-9 || x.s_dot > cfg.v_max + 1e-9) ev.dynamics_ok = false;
  }
  ev.follower = follower_best_response(prob.x0_F, ev.leader_traj, prob.ref_F, cfg, prob.cp,
                                       side_for(sigma), prob.risk.Q);
  const double tL = predicted_crossing_time(ev.leader_traj, prob.cp.s_cp_leader, cfg.tail_speed_floor);
  const double tF =
      predicted_crossing_time(ev.follower.trajectory, prob.cp.s_cp_follower, cfg.tail_speed_floor);
  ev.psi = signed_pet_from_times(tL, tF).psi;
  ev.sign_ok = sign_of(sigma) * ev.psi >= cfg.sign_margin - 1e-6;
  ev.J_h = game_hazard(ev.psi, prob);
  ev.J_s = smoothness_cost(leader_actions, cfg.R);
  Trajectory ref_head(std::vector<FrenetState>(prob.ref_L.states().begin(),
                                               prob.ref_L.states().begin() + cfg.N + 1),
                      cfg.dt);
  ev.J_c = compliance_cost(ev.leader_traj, ref_head, prob.risk.Q);
  ev.J_L = total_utility(ev.J_h, ev.J_s, ev.J_c, prob.risk);
  return ev;
}

GameSolution leader_ocp(const LeaderProblem& prob, Strategy sigma,
                        const std::vector<double>* warm_start) {
  const auto& cfg = prob.cfg;
  cfg.validate();
  prob.risk.validate(false);
  check_horizon(prob.ref_L, cfg, "leader reference");
  check_horizon(prob.ref_F, cfg, "follower reference");
  const int N = cfg.N;

  LeaderLongitudinal obj(prob, sigma);
  std::vector<Eigen::VectorXd> seeds;
  const bool warm = warm_start && warm_start->size() == static_cast<std::size_t>(N);
  if (warm) {
    seeds.push_back(Eigen::Map<const Eigen::VectorXd>(warm_start->data(), N));
  }
  for (double a : {0.0, cfg.a_min, 0.5 * cfg.a_min, 0.5 * cfg.a_max, cfg.a_max}) {
    seeds.push_back(Eigen::VectorXd::Constant(N, a));
  }
  // two-phase profiles: one level for the first k steps, another after
  const double levels[] = {cfg.a_min, 0.5 * cfg.a_min, 0.0, 0.5 * cfg.a_max, cfg.a_max};
  for (double a1 : levels) {
    for (double a2 : levels) {
      if (a1 == a2) continue;
      for (int k = 1; k < N; ++k) {
        Eigen::VectorXd u = Eigen::VectorXd::Constant(N, a2);
        u.head(k).setConstant(a1);
        seeds.push_back(u);
      }
    }
  }
  struct Scored {
    Eigen::VectorXd u;
    double merit;
  };
  std::vector<Scored> scored;
  for (auto& s : seeds) {
    Eigen::VectorXd u = project_speed(s, obj.v0(), cfg);
    scored.push_back({u, obj.eval(u).merit});
  }
  // Warm start always runs; the rest compete on initial merit.
  const std::size_t fixed = warm ? 1 : 0;
  std::stable_sort(scored.begin() + static_cast<std::ptrdiff_t>(fixed), scored.end(),
                   [](const Scored& a, const Scored& b) { return a.merit < b.merit; });
  const std::size_t extra = static_cast<std::size_t>(fixed ? cfg.warm_starts : cfg.cold_starts);
  const std::size_t runs = std::min<std::size_t>(scored.size(), fixed + extra);

  SqpOutcome best;
  bool have = false;
  int iterations = 0;
  bool converged_best = false;
  for (std::size_t i = 0; i < runs; ++i) {
    SqpOutcome o = run_sqp(obj, scored[i].u, cfg);
    iterations += o.iterations;
    if (!have || o.e.merit < best.e.merit) {
      best = o;
      converged_best = o.converged;
      have = true;
    }
  }
  polish_compass(obj, best, cfg, 6 * N);

  const Eigen::VectorXd lat = leader_lateral(prob);
  std::vector<ControlAction> actions = combine(best.u, lat);
  const LeaderEvaluation ev = evaluate_leader(prob, sigma, actions);
  GameSolution sol = package(prob, sigma, ev, actions);
  sol.outer_iterations = iterations;
  if (!ev.feasible()) {
    sol.status = SolveStatus::kInfeasible;
  } else {
    sol.status = converged_best ? SolveStatus::kOptimal : SolveStatus::kMaxIter;
  }
  return sol;
}

namespace {

bool conflict_passed(const FrenetState& leader, const FrenetState& follower, const ConflictCoords& cp) {
  return leader.s >= cp.s_cp_leader || follower.s >= cp.s_cp_follower;
}

GameSolution tracking_solution(const LeaderProblem& prob) {
  const auto& cfg = prob.cfg;
  const auto& r = prob.risk;
  const Channel ch(cfg.N, cfg.dt);
  const FrenetState x0L = clip_speed(prob.x0_L, cfg.v_max);
  ChannelSpec lon = longitudinal_spec(x0L, prob.ref_L, cfg, r.omega_c * r.Q[0], r.omega_c * r.Q[1],
                                      r.omega_s * cfg.R[0]);
  const Eigen::VectorXd u = solve_channel(ch, lon, false).u;
  const Eigen::VectorXd lat = leader_lateral(prob);
  GameSolution sol;
  sol.no_conflict = true;
  sol.sigma_star = Strategy::kRush;
  sol.leader_actions = combine(u, lat);
  sol.leader_traj = assemble(x0L, sol.leader_actions, cfg.dt);
  const FollowerResponse f = follower_solve(prob.x0_F, sol.leader_traj, prob.ref_F, cfg, prob.cp,
                                            FollowerSide::kBehind, r.Q, false);
  sol.follower_actions = f.actions;
  sol.follower_traj = f.trajectory;
  sol.J_F = f.J_F;
  sol.kkt = f.kkt;
  Trajectory ref_head(std::vector<FrenetState>(prob.ref_L.states().begin(),
                                               prob.ref_L.states().begin() + cfg.N + 1),
                      cfg.dt);
  sol.J_h = 0.0;
  sol.J_L = total_utility(0.0, smoothness_cost(sol.leader_actions, cfg.R),
                          compliance_cost(sol.leader_traj, ref_head, r.Q), r);
  sol.status = SolveStatus::kOptimal;
  return sol;
}

}  // namespace

GameSolution stackelberg_solve(const LeaderProblem& prob, const std::vector<double>* warm_start) {
  prob.cfg.validate();
  if (conflict_passed(prob.x0_L, prob.x0_F, prob.cp)) return tracking_solution(prob);

  std::optional<GameSolution> rush, yield;
  if (prob.cfg.allow_rush) rush = leader_ocp(prob, Strategy::kRush, warm_start);
  if (prob.cfg.allow_yield) yield = leader_ocp(prob, Strategy::kYield, warm_start);

  const double inf = std::numeric_limits<double>::infinity();
  auto feasible = [](const std::optional<GameSolution>& s) {
    return s && s->status != SolveStatus::kInfeasible;
  };
  const std::array<double, 2> costs{rush ? rush->J_L : inf, yield ? yield->J_L : inf};
  const std::array<bool, 2> ok{feasible(rush), feasible(yield)};

  GameSolution chosen;
  if (ok[0] && ok[1]) {
    chosen = costs[1] < costs[0] - prob.cfg.tie_tolerance ? *yield : *rush;
  } else if (ok[0]) {
    chosen = *rush;
  } else if (ok[1]) {
    chosen = *yield;
  } else {
    chosen = !yield || (rush && costs[0] <= costs[1]) ? *rush : *yield;
    chosen.status = SolveStatus::kInfeasible;
  }
  chosen.candidate_costs = costs;
  chosen.candidate_feasible = ok;
  chosen.outer_iterations = (rush ? rush->outer_iterations : 0) + (yield ? yield->outer_iterations : 0);
  return chosen;
}

OracleResult brute_force_oracle(const LeaderProblem& prob, int levels) {
  const auto& cfg = prob.cfg;
  if (cfg.N > 4 || levels > 5) throw std::invalid_argument("oracle instance exceeds N<=4, levels<=5");
  if (levels < 2) throw std::invalid_argument("oracle needs at least 2 grid levels");
  std::vector<double> grid(levels);
  for (int i = 0; i < levels; ++i) grid[i] = cfg.a_min + (cfg.a_max - cfg.a_min) * i / (levels - 1);

  const int per_step = levels * levels;
  std::size_t total = 1;
  for (int k = 0; k < cfg.N; ++k) total *= static_cast<std::size_t>(per_step);

  const double inf = std::numeric_limits<double>::infinity();
  OracleResult out;
  out.best_per_strategy = {inf, inf};
  out.J_L = inf;
  std::vector<ControlAction> actions(cfg.N);
  for (Strategy sigma : {Strategy::kRush, Strategy::kYield}) {
    if ((sigma == Strategy::kRush && !cfg.allow_rush) || (sigma == Strategy::kYield && !cfg.allow_yield)) {
      continue;
    }
    const int si = sigma == Strategy::kRush ? 0 : 1;
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t code = idx;
      for (int k = 0; k < cfg.N; ++k) {
        const int c = static_cast<int>(code % per_step);
        code /= per_step;
        actions[k] = {grid[c / levels], grid[c % levels]};
      }
      ++out.candidates;
      const LeaderEvaluation ev = evaluate_leader(prob, sigma, actions);
      if (!ev.feasible()) continue;
      if (ev.J_L < out.best_per_strategy[si]) out.best_per_strategy[si] = ev.J_L;
      // Strict improvement keeps the rush candidate on exact ties.
      if (ev.J_L < out.J_L) {
        out.J_L = ev.J_L;
        out.sigma_star = sigma;
        out.best_actions = actions;
      }
    }
  }
  if (out.best_per_strategy[0] < inf && out.best_per_strategy[1] < inf &&
      out.best_per_strategy[1] >= out.best_per_strategy[0] - cfg.tie_tolerance) {
    out.sigma_star = Strategy::kRush;
  }
  return out;
}

// ---------------------------------------------------------------------------

GameLoop::GameLoop(GameSetup setup, GameConfig cfg, RiskParams risk, DensityFn density)
    : setup_(setup), cfg_(cfg), risk_(risk), density_(std::move(density)) {
  cfg_.validate();
  risk_.validate(false);
}

std::optional<GameSolution> GameLoop::step(const FrenetState& leader, const FrenetState& follower) {
  if (terminated()) return std::nullopt;
  if (conflict_passed(leader, follower, setup_.cp)) {
    reason_ = TerminationReason::kPassedCp;
    return std::nullopt;
  }
  if (elapsed() >= cfg_.delta_max - 1e-9) {
    reason_ = TerminationReason::kDeadlockCutoff;
    return std::nullopt;
  }
  LeaderProblem prob;
  prob.x0_L = leader;
  prob.x0_F = follower;
  prob.ref_L = make_reference(leader, setup_.leader_speed_ref, cfg_.N, cfg_.dt);
  prob.ref_F = make_reference(follower, setup_.follower_speed_ref, cfg_.N, cfg_.dt);
  prob.cp = setup_.cp;
  prob.cfg = cfg_;
  prob.risk = risk_;
  prob.density = density_;
  GameSolution sol = stackelberg_solve(prob, warm_.empty() ? nullptr : &warm_);
  warm_.clear();
  for (std::size_t k = 1; k < sol.leader_actions.size(); ++k) warm_.push_back(sol.leader_actions[k].s_ddot);
  if (!sol.leader_actions.empty()) warm_.push_back(sol.leader_actions.back().s_ddot);
  ++steps_;
  return sol;
}

InteractionLog run_game_loop(const FrenetState& x0_L, const FrenetState& x0_F,
                             const GameSetup& setup, const GameConfig& cfg,
                             const RiskParams& risk, const DensityFn& density,
                             FollowerPolicy& vut_policy) {
  GameLoop loop(setup, cfg, risk, density);
  InteractionLog log;
  FrenetState xL = x0_L, xF = x0_F;
  const DynamicsLimits lim = cfg.limits();
  while (auto sol = loop.step(xL, xF)) {
    GameStepRecord rec;
    rec.leader = xL;
    rec.follower = xF;
    rec.leader_action = sol->leader_actions.front();
    rec.leader_action.s_ddot = std::clamp(rec.leader_action.s_ddot, cfg.a_min, cfg.a_max);
    rec.leader_action.l_ddot = std::clamp(rec.leader_action.l_ddot, cfg.a_min, cfg.a_max);
    rec.follower_action = vut_policy.act({xF, xL, setup.cp, setup.follower_speed_ref});
    rec.solution = std::move(*sol);
    xL = troublemaker::step(xL, rec.leader_action, cfg.dt, lim).state;
    xF = troublemaker::step(xF, rec.follower_action, cfg.dt, lim).state;
    log.steps.push_back(std::move(rec));
  }
  log.reason = loop.reason();
  log.elapsed = loop.elapsed();
  log.final_leader = xL;
  log.final_follower = xF;
  return log;
}

}  // namespace troublemaker
