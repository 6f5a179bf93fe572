#pragma once

// Surrogate safety measures and the interaction utility terms.

#include <array>
#include <functional>
#include <optional>
#include <span>

#include "troublemaker/kinematics.hpp"

namespace troublemaker {

enum class HazardForm {
  kAsPrinted,  // (psi^2 + (m - n) psi + m n) / (m n)
  kRootForm,   // (psi^2 + (m - n) psi - m n) / (m n), zero at psi = -m and psi = n
};

struct RiskParams {
  // Boundaries of the unsafe band [-m, n] in signed PET. n bounds the side
  // where the first actor arrives first (psi > 0), m the side where it yields.
  double m = 2.3;
  double n = 2.3;
  double omega_h = 0.7;
  double omega_s = 0.2;
  double omega_c = 0.1;
  std::array<double, 4> Q{1.0, 20.0, 1.0, 5.0};
  double severe_pet_threshold = 2.3;
  HazardForm hazard_form = HazardForm::kAsPrinted;

  // The game accepts unnormalized weights (argmin is scale invariant).
  void validate(bool require_normalized = true) const;
};

struct SignedPet {
  double pet = 0.0;
  int indicator = 1;
  double psi = 0.0;
  double delta_t = 0.0;  // t_2 - t_1
};

// Density evaluated at a signed PET. Must be safe to call concurrently.
using DensityFn = std::function<double(double)>;

inline double unit_density(double) { return 1.0; }

SignedPet signed_pet_from_times(double t1, double t2);

std::optional<double> pet(const Trajectory& traj_a, const Trajectory& traj_b,
                          const ConflictPoint& cp);
// t_1: A at the conflict point, t_2: B at the conflict point.
std::optional<SignedPet> signed_pet(const Trajectory& traj_a, const Trajectory& traj_b,
                                    const ConflictPoint& cp);

double hazard_pet(const SignedPet& sp);
double hazard_quadratic(double psi, const RiskParams& params, const DensityFn& density);

double smoothness_cost(std::span<const ControlAction> actions,
                       const std::array<double, 2>& R = {1.0, 1.0});
double compliance_cost(const Trajectory& traj, const Trajectory& ref,
                       const std::array<double, 4>& Q);
double total_utility(double j_h, double j_s, double j_c, const RiskParams& params);
bool is_severe_conflict(double pet_s, const RiskParams& params);

}  // namespace troublemaker
