#include "troublemaker/qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "troublemaker/errors.hpp"

namespace troublemaker {

void QpProblem::validate() const {
  const auto n = H.rows();
  if (H.cols() != n || f.size() != n) throw InvalidStateError("QP: H/f dimension mismatch");
  if (A.rows() > 0 && (A.cols() != n || b.size() != A.rows())) {
    throw InvalidStateError("QP: A/b dimension mismatch");
  }
  if (G.rows() > 0 && (G.cols() != n || h.size() != G.rows())) {
    throw InvalidStateError("QP: G/h dimension mismatch");
  }
}

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

double objective(const QpProblem& p, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(p.H * x) + p.f.dot(x);
}

// Equality-constrained solve on the guessed active set. Returns false when
// the guess is not a valid KKT point.
bool polish(const QpProblem& p, QpResult& r) {
  const auto n = p.num_vars();
  const auto neq = p.A.rows();
  std::vector<Eigen::Index> active;
  const Eigen::VectorXd slack = p.h - p.G * r.x;
  for (Eigen::Index i = 0; i < p.G.rows(); ++i) {
    if (r.mu[i] > slack[i]) active.push_back(i);
  }
  const auto na = static_cast<Eigen::Index>(active.size());
  const auto dim = n + neq + na;
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs(dim);
  K.topLeftCorner(n, n) = p.H;
  rhs.head(n) = -p.f;
  if (neq > 0) {
    K.block(0, n, n, neq) = p.A.transpose();
    K.block(n, 0, neq, n) = p.A;
    rhs.segment(n, neq) = p.b;
  }
  for (Eigen::Index k = 0; k < na; ++k) {
    K.block(0, n + neq + k, n, 1) = p.G.row(active[k]).transpose();
    K.block(n + neq + k, 0, 1, n) = p.G.row(active[k]);
    rhs[n + neq + k] = p.h[active[k]];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (lu.rank() < dim) return false;
  const Eigen::VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite()) return false;

  QpResult cand = r;
  cand.x = sol.head(n);
  cand.lambda = sol.segment(n, neq);
  cand.mu.setZero(p.G.rows());
  for (Eigen::Index k = 0; k < na; ++k) cand.mu[active[k]] = sol[n + neq + k];
  const auto res = kkt_residuals(p, cand.x, cand.lambda, cand.mu);
  const auto before = kkt_residuals(p, r.x, r.lambda, r.mu);
  const double worst_after = std::max({res.stationarity, res.primal, res.dual, res.complementarity});
  const double worst_before =
      std::max({before.stationarity, before.primal, before.dual, before.complementarity});
  if (worst_after > std::max(1e-9, worst_before)) return false;
  cand.mu = cand.mu.cwiseMax(0.0);
  cand.objective = objective(p, cand.x);
  cand.polished = true;
  r = std::move(cand);
  return true;
}

}  // namespace

KktResiduals kkt_residuals(const QpProblem& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lambda, const Eigen::VectorXd& mu) {
  KktResiduals out;
  Eigen::VectorXd grad = p.H * x + p.f;
  if (p.A.rows() > 0) grad += p.A.transpose() * lambda;
  if (p.G.rows() > 0) grad += p.G.transpose() * mu;
  out.stationarity = inf_norm(grad);
  if (p.A.rows() > 0) out.primal = inf_norm(p.A * x - p.b);
  if (p.G.rows() > 0) {
    const Eigen::VectorXd g = p.G * x - p.h;
    out.primal = std::max(out.primal, std::max(0.0, g.maxCoeff()));
    out.dual = std::max(0.0, -mu.minCoeff());
    out.complementarity = mu.cwiseProduct(g).cwiseAbs().maxCoeff();
  }
  return out;
}

QpResult solve_qp(const QpProblem& p, const QpSettings& settings) {
  p.validate();
  const auto n = p.num_vars();
  const auto neq = p.A.rows();
  const auto m = p.G.rows();

  QpResult r;
  r.x = Eigen::VectorXd::Zero(n);
  r.lambda = Eigen::VectorXd::Zero(neq);
  r.mu = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(m);
  if (m > 0) w = (p.h - p.G * r.x).cwiseMax(1.0);

  const double scale_d = 1.0 + inf_norm(p.f);
  const double scale_p = 1.0 + std::max(inf_norm(p.b), inf_norm(p.h));

  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::LLT<Eigen::MatrixXd> schur;
  Eigen::MatrixXd KinvAt;

  // Newton direction for the relaxed KKT system with complementarity target
  // `target` (vector of desired w_i * mu_i). Factorizations are reused
  // between predictor and corrector.
  auto direction = [&](const Eigen::VectorXd& rd, const Eigen::VectorXd& rp, const Eigen::VectorXd& rg,
                       const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dl,
                       Eigen::VectorXd& dmu, Eigen::VectorXd& dw) {
    // rc = target - w.*mu
    Eigen::VectorXd rhs = -rd;
    Eigen::VectorXd wi_rc(m);
    if (m > 0) {
      const Eigen::VectorXd D = r.mu.cwiseQuotient(w);
      wi_rc = rc.cwiseQuotient(w);
      rhs -= p.G.transpose() * (D.cwiseProduct(rg) + wi_rc);
    }
    if (neq > 0) {
      const Eigen::VectorXd kr = llt.solve(rhs);
      dl = schur.solve(p.A * kr + rp);
      dx = kr - KinvAt * dl;
    } else {
      dl.resize(0);
      dx = llt.solve(rhs);
    }
    if (m > 0) {
      const Eigen::VectorXd D = r.mu.cwiseQuotient(w);
      dmu = D.cwiseProduct(p.G * dx + rg) + wi_rc;
      dw = -rg - p.G * dx;
    } else {
      dmu.resize(0);
      dw.resize(0);
    }
  };

  for (int iter = 0; iter < settings.max_iter; ++iter) {
    r.iterations = iter;
    Eigen::VectorXd rd = p.H * r.x + p.f;
    if (neq > 0) rd += p.A.transpose() * r.lambda;
    if (m > 0) rd += p.G.transpose() * r.mu;
    const Eigen::VectorXd rp = neq > 0 ? Eigen::VectorXd(p.A * r.x - p.b) : Eigen::VectorXd();
    const Eigen::VectorXd rg = m > 0 ? Eigen::VectorXd(p.G * r.x + w - p.h) : Eigen::VectorXd();
    const double gap = m > 0 ? w.dot(r.mu) / static_cast<double>(m) : 0.0;

    if (inf_norm(rd) <= settings.tol * scale_d && inf_norm(rp) <= settings.tol * scale_p &&
        inf_norm(rg) <= settings.tol * scale_p && gap <= settings.tol) {
      r.status = QpStatus::kOptimal;
      break;
    }
    if (m > 0 && r.mu.maxCoeff() > 1e13) {
      r.status = QpStatus::kInfeasible;
      break;
    }

    Eigen::MatrixXd K = p.H;
    if (m > 0) K.noalias() += p.G.transpose() * r.mu.cwiseQuotient(w).asDiagonal() * p.G;
    K.diagonal().array() += 1e-13;
    llt.compute(K);
    if (llt.info() != Eigen::Success) {
      r.status = QpStatus::kMaxIter;
      break;
    }
    if (neq > 0) {
      KinvAt = llt.solve(p.A.transpose());
      Eigen::MatrixXd S = p.A * KinvAt;
      S.diagonal().array() += 1e-13;
      schur.compute(S);
    }

    Eigen::VectorXd dx, dl, dmu, dw;
    if (m == 0) {
      direction(rd, rp, rg, Eigen::VectorXd(), dx, dl, dmu, dw);
      r.x += dx;
      if (neq > 0) r.lambda += dl;
      continue;
    }

    // Predictor (affine scaling).
    const Eigen::VectorXd wmu = w.cwiseProduct(r.mu);
    direction(rd, rp, rg, -wmu, dx, dl, dmu, dw);
    const double a_aff = std::min(max_step(w, dw), max_step(r.mu, dmu));
    const double gap_aff =
        (w + a_aff * dw).dot(r.mu + a_aff * dmu) / static_cast<double>(m);
    const double sigma = std::pow(gap_aff / std::max(gap, 1e-300), 3.0);

    // Corrector: relaxed complementarity target eps = sigma * gap.
    const double eps = std::clamp(sigma, 0.0, 1.0) * gap;
    const Eigen::VectorXd rc =
        Eigen::VectorXd::Constant(m, eps) - wmu - dw.cwiseProduct(dmu);
    direction(rd, rp, rg, rc, dx, dl, dmu, dw);
    const double alpha = std::min(1.0, 0.995 * std::min(max_step(w, dw), max_step(r.mu, dmu)));
    r.x += alpha * dx;
    if (neq > 0) r.lambda += alpha * dl;
    r.mu += alpha * dmu;
    w += alpha * dw;
    w = w.cwiseMax(1e-300);
    r.mu = r.mu.cwiseMax(1e-300);
    r.iterations = iter + 1;
  }

  if (r.status == QpStatus::kOptimal && settings.polish && m > 0) polish(p, r);
  r.objective = objective(p, r.x);
  return r;
}

}  // namespace troublemaker
