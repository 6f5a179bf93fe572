#pragma once

// Dense convex quadratic programming.
//
//   minimize    0.5 x' H x + f' x
//   subject to  A x  = b
//               G x <= h
//
// Solved with a primal-dual interior-point method on the relaxed
// complementarity system mu_i * w_i = eps (w = h - G x), with eps driven to
// zero, followed by an active-set polish that makes complementarity exact
// when the identified active set is consistent.

#include <Eigen/Dense>

namespace troublemaker {

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd A;  // may have zero rows
  Eigen::VectorXd b;
  Eigen::MatrixXd G;  // may have zero rows
  Eigen::VectorXd h;

  Eigen::Index num_vars() const { return H.rows(); }
  void validate() const;
};

enum class QpStatus { kOptimal, kMaxIter, kInfeasible };

struct QpSettings {
  double tol = 1e-10;
  int max_iter = 80;
  bool polish = true;
};

struct QpResult {
  QpStatus status = QpStatus::kMaxIter;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;  // equality multipliers
  Eigen::VectorXd mu;      // inequality multipliers, >= 0
  double objective = 0.0;
  int iterations = 0;
  bool polished = false;
};

struct KktResiduals {
  double stationarity = 0.0;     // ||H x + f + A' lambda + G' mu||_inf
  double primal = 0.0;           // max(||A x - b||_inf, max(G x - h, 0))
  double dual = 0.0;             // max(-mu, 0)
  double complementarity = 0.0;  // max |mu_i (G x - h)_i|
};

QpResult solve_qp(const QpProblem& problem, const QpSettings& settings = {});
KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu);

}  // namespace troublemaker
