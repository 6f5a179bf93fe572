#include "troublemaker/risk.hpp"

#include <cmath>

#include "troublemaker/errors.hpp"

namespace troublemaker {

void RiskParams::validate(bool require_normalized) const {
  if (!(m > 0.0) || !(n > 0.0)) throw ConfigError("risk boundaries m and n must be positive");
  if (omega_h < 0.0 || omega_s < 0.0 || omega_c < 0.0) {
    throw ConfigError("utility weights must be non-negative");
  }
  if (require_normalized && std::abs(omega_h + omega_s + omega_c - 1.0) > 1e-9) {
    throw ConfigError("utility weights must sum to 1");
  }
  for (double q : Q) {
    if (q < 0.0 || !std::isfinite(q)) throw ConfigError("Q entries must be non-negative");
  }
  if (!(severe_pet_threshold > 0.0)) throw ConfigError("severe PET threshold must be positive");
}

SignedPet signed_pet_from_times(double t1, double t2) {
  SignedPet out;
  out.delta_t = t2 - t1;
  out.pet = std::abs(out.delta_t);
  out.indicator = out.delta_t >= 0.0 ? 1 : -1;
  out.psi = out.pet * out.indicator;
  return out;
}

std::optional<double> pet(const Trajectory& traj_a, const Trajectory& traj_b,
                          const ConflictPoint& cp) {
  auto sp = signed_pet(traj_a, traj_b, cp);
  if (!sp) return std::nullopt;
  return sp->pet;
}

std::optional<SignedPet> signed_pet(const Trajectory& traj_a, const Trajectory& traj_b,
                                    const ConflictPoint& cp) {
  const auto t1 = crossing_time(traj_a, cp.s_on_path_A);
  const auto t2 = crossing_time(traj_b, cp.s_on_path_B);
  if (!t1 || !t2) return std::nullopt;
  return signed_pet_from_times(*t1, *t2);
}

double hazard_pet(const SignedPet& sp) { return sp.pet; }

double hazard_quadratic(double psi, const RiskParams& params, const DensityFn& density) {
  const double p = density ? density(psi) : 1.0;
  if (!std::isfinite(p)) throw InvalidStateError("density is not finite at psi");
  const double mn = params.m * params.n;
  const double constant = params.hazard_form == HazardForm::kAsPrinted ? mn : -mn;
  return (psi * psi + (params.m - params.n) * psi + constant) / mn * p;
}

double smoothness_cost(std::span<const ControlAction> actions, const std::array<double, 2>& R) {
  double sum = 0.0;
  for (const auto& a : actions) sum += R[0] * a.s_ddot * a.s_ddot + R[1] * a.l_ddot * a.l_ddot;
  return sum;
}

double compliance_cost(const Trajectory& traj, const Trajectory& ref,
                       const std::array<double, 4>& Q) {
  if (traj.size() != ref.size()) throw InvalidStateError("trajectory/reference length mismatch");
  if (std::abs(traj.dt() - ref.dt()) > 1e-12) {
    throw InvalidStateError("trajectory/reference dt mismatch");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto& x = traj[k];
    const auto& r = ref[k];
    const double ds = x.s - r.s, dv = x.s_dot - r.s_dot, dl = x.l - r.l, dw = x.l_dot - r.l_dot;
    sum += Q[0] * ds * ds + Q[1] * dv * dv + Q[2] * dl * dl + Q[3] * dw * dw;
  }
  return sum;
}

double total_utility(double j_h, double j_s, double j_c, const RiskParams& params) {
  return params.omega_h * j_h + params.omega_s * j_s + params.omega_c * j_c;
}

bool is_severe_conflict(double pet_s, const RiskParams& params) {
  return pet_s < params.severe_pet_threshold;
}

}  // namespace troublemaker
