#include "moclqr/qp.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <vector>

namespace moclqr {

namespace {

constexpr double kInf = 1e30;  // bounds at or beyond this magnitude are "absent"
constexpr double kEqRhoScale = 1e3;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr int kRuizIters = 10;
constexpr int kRhoAdaptInterval = 100;
constexpr double kPolishDelta = 1e-7;

double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

struct Scaled {
  SpMat P;
  Vec q;
  SpMat A;
  Vec l, u;
  Vec D, E;  // accumulated primal / constraint-row scalings
  double c = 1.0;
};

// Modified Ruiz equilibration of the KKT data plus cost normalization.
void ruiz(Scaled& s) {
  const int n = static_cast<int>(s.q.size());
  const int m = static_cast<int>(s.l.size());
  const auto to_scale = [](double nrm) {
    if (nrm < 1e-12) return 1.0;
    return 1.0 / std::sqrt(std::min(std::max(nrm, 1e-10), 1e10));
  };
  for (int pass = 0; pass < kRuizIters; ++pass) {
    Vec dx = Vec::Zero(n), de = Vec::Zero(m);
    for (int k = 0; k < s.P.outerSize(); ++k)
      for (SpMat::InnerIterator it(s.P, k); it; ++it)
        dx[it.col()] = std::max(dx[it.col()], std::abs(it.value()));
    for (int k = 0; k < s.A.outerSize(); ++k)
      for (SpMat::InnerIterator it(s.A, k); it; ++it) {
        dx[it.col()] = std::max(dx[it.col()], std::abs(it.value()));
        de[it.row()] = std::max(de[it.row()], std::abs(it.value()));
      }
    const Vec sx = dx.unaryExpr(to_scale);
    const Vec se = de.unaryExpr(to_scale);
    s.P = sx.asDiagonal() * s.P * sx.asDiagonal();
    s.q = sx.cwiseProduct(s.q);
    s.A = se.asDiagonal() * s.A * sx.asDiagonal();
    s.l = se.cwiseProduct(s.l);
    s.u = se.cwiseProduct(s.u);
    s.D = s.D.cwiseProduct(sx);
    s.E = s.E.cwiseProduct(se);

    double col_mean = 0.0;
    if (n > 0) {
      Vec pc = Vec::Zero(n);
      for (int k = 0; k < s.P.outerSize(); ++k)
        for (SpMat::InnerIterator it(s.P, k); it; ++it)
          pc[it.col()] = std::max(pc[it.col()], std::abs(it.value()));
      col_mean = pc.mean();
    }
    const double g = std::max(col_mean, max_abs(s.q));
    const double gamma = (g < 1e-12) ? 1.0 : 1.0 / std::min(std::max(g, 1e-10), 1e10);
    s.P *= gamma;
    s.q *= gamma;
    s.c *= gamma;
  }
}

SpMat build_kkt(const SpMat& P, const SpMat& A, double sigma, const Vec& rho) {
  const int n = P.rows();
  const int m = A.rows();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<size_t>(P.nonZeros() + 2 * A.nonZeros() + n + m));
  for (int k = 0; k < P.outerSize(); ++k)
    for (SpMat::InnerIterator it(P, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < n; ++i) t.emplace_back(i, i, sigma);
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      t.emplace_back(n + it.row(), it.col(), it.value());
      t.emplace_back(it.col(), n + it.row(), it.value());
    }
  for (int i = 0; i < m; ++i) t.emplace_back(n + i, n + i, -1.0 / rho[i]);
  SpMat K(n + m, n + m);
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

struct PolishOutcome {
  bool accepted = false;
  Vec x, y;
  double rp = 0.0, rd = 0.0;
};

// Solve the equality-constrained QP on the guessed active set with a
// regularized factorization plus iterative refinement, then accept only if
// the result certifies optimality: KKT residuals within tol, correct
// multiplier signs, and no inactive constraint violated.
PolishOutcome try_polish(const QpProblem& prob, const SpMat& At, const Vec& y_u,
                         const std::vector<bool>& is_eq, double tol) {
  PolishOutcome out;
  const int n = static_cast<int>(prob.q.size());
  const int m = static_cast<int>(prob.l.size());

  std::vector<int> act, side;  // side: -1 lower, +1 upper, 0 equality
  for (int i = 0; i < m; ++i) {
    if (is_eq[i]) {
      act.push_back(i);
      side.push_back(0);
    } else if (y_u[i] < 0.0) {
      act.push_back(i);
      side.push_back(-1);
    } else if (y_u[i] > 0.0) {
      act.push_back(i);
      side.push_back(+1);
    }
  }
  const int ma = static_cast<int>(act.size());

  std::vector<Eigen::Triplet<double>> t0, treg;
  for (int k = 0; k < prob.P.outerSize(); ++k)
    for (SpMat::InnerIterator it(prob.P, k); it; ++it)
      t0.emplace_back(it.row(), it.col(), it.value());
  // Rows of A for the active set, gathered via the transpose for column access.
  std::vector<int> row_to_act(m, -1);
  for (int a = 0; a < ma; ++a) row_to_act[act[a]] = a;
  for (int k = 0; k < prob.A.outerSize(); ++k)
    for (SpMat::InnerIterator it(prob.A, k); it; ++it) {
      const int a = row_to_act[it.row()];
      if (a < 0) continue;
      t0.emplace_back(n + a, it.col(), it.value());
      t0.emplace_back(it.col(), n + a, it.value());
    }
  treg = t0;
  for (int i = 0; i < n; ++i) treg.emplace_back(i, i, kPolishDelta);
  for (int a = 0; a < ma; ++a) treg.emplace_back(n + a, n + a, -kPolishDelta);

  SpMat K0(n + ma, n + ma), Kreg(n + ma, n + ma);
  K0.setFromTriplets(t0.begin(), t0.end());
  Kreg.setFromTriplets(treg.begin(), treg.end());

  Eigen::SimplicialLDLT<SpMat> ldlt;
  ldlt.compute(Kreg);
  if (ldlt.info() != Eigen::Success) return out;

  Vec rhs(n + ma);
  rhs.head(n) = -prob.q;
  for (int a = 0; a < ma; ++a) rhs[n + a] = (side[a] == +1) ? prob.u[act[a]] : prob.l[act[a]];

  Vec sol = ldlt.solve(rhs);
  for (int pass = 0; pass < 6; ++pass) {
    const Vec resid = rhs - K0 * sol;
    if (max_abs(resid) < 1e-14 * (1.0 + max_abs(rhs))) break;
    sol += ldlt.solve(resid);
  }

  Vec xp = sol.head(n);
  Vec yp = Vec::Zero(m);
  for (int a = 0; a < ma; ++a) yp[act[a]] = sol[n + a];

  const Vec Ax = prob.A * xp;
  double rp = 0.0, req = 0.0;
  bool signs_ok = true;
  for (int i = 0; i < m; ++i) {
    if (prob.l[i] > -kInf) rp = std::max(rp, prob.l[i] - Ax[i]);
    if (prob.u[i] < kInf) rp = std::max(rp, Ax[i] - prob.u[i]);
  }
  for (int a = 0; a < ma; ++a) {
    const int i = act[a];
    const double b = (side[a] == +1) ? prob.u[i] : prob.l[i];
    req = std::max(req, std::abs(Ax[i] - b));
    if (side[a] == -1 && yp[i] > tol) signs_ok = false;
    if (side[a] == +1 && yp[i] < -tol) signs_ok = false;
  }
  const double rd = max_abs(prob.P * xp + prob.q + At * yp);

  out.accepted = signs_ok && rp <= tol && req <= tol && rd <= tol;
  out.x = std::move(xp);
  out.y = std::move(yp);
  out.rp = std::max(rp, req);
  out.rd = rd;
  return out;
}

}  // namespace

QpSolution solve_qp(const QpProblem& prob, const QpSettings& settings) {
  const int n = static_cast<int>(prob.q.size());
  const int m = static_cast<int>(prob.l.size());
  if (prob.P.rows() != n || prob.P.cols() != n)
    throw ValidationError("qp: P dimensions inconsistent with q");
  if (prob.A.rows() != m || (m > 0 && prob.A.cols() != n) || prob.u.size() != m)
    throw ValidationError("qp: constraint dimensions inconsistent");
  {
    SpMat diff = SpMat(prob.P.transpose()) - prob.P;
    double scale = 0.0;
    for (int k = 0; k < prob.P.outerSize(); ++k)
      for (SpMat::InnerIterator it(prob.P, k); it; ++it)
        scale = std::max(scale, std::abs(it.value()));
    double asym = 0.0;
    for (int k = 0; k < diff.outerSize(); ++k)
      for (SpMat::InnerIterator it(diff, k); it; ++it) asym = std::max(asym, std::abs(it.value()));
    if (asym > 1e-12 * (1.0 + scale)) throw ValidationError("qp: P is not symmetric");
  }
  for (int i = 0; i < m; ++i)
    if (!(prob.l[i] <= prob.u[i])) throw ValidationError("qp: bound l > u");

  Scaled s{prob.P, prob.q, prob.A, prob.l, prob.u, Vec::Ones(n), Vec::Ones(m), 1.0};
  if (settings.scaling) ruiz(s);

  std::vector<bool> is_eq(m);
  for (int i = 0; i < m; ++i) is_eq[i] = (prob.l[i] == prob.u[i]);

  double rho_base = settings.rho0;
  Vec rho(m);
  const auto fill_rho = [&] {
    for (int i = 0; i < m; ++i) rho[i] = is_eq[i] ? rho_base * kEqRhoScale : rho_base;
  };
  fill_rho();

  Eigen::SimplicialLDLT<SpMat> ldlt;
  {
    const SpMat K = build_kkt(s.P, s.A, settings.sigma, rho);
    ldlt.analyzePattern(K);
    ldlt.factorize(K);
    if (ldlt.info() != Eigen::Success) throw ValidationError("qp: KKT factorization failed");
  }

  const SpMat At = prob.A.transpose();
  const SpMat Ats = s.A.transpose();

  Vec x = Vec::Zero(n);
  Vec z = Vec::Zero(m).cwiseMax(s.l).cwiseMin(s.u);
  Vec y = Vec::Zero(m);
  Vec dy = Vec::Zero(m);

  QpSolution result;
  result.status = QpStatus::MaxIterations;

  const auto finish = [&](Vec xf, Vec yf, QpStatus st, double rp, double rd, int iters,
                          bool polished) {
    result.x = std::move(xf);
    result.y = std::move(yf);
    result.status = st;
    result.primal_residual = rp;
    result.dual_residual = rd;
    result.iterations = iters;
    result.polished = polished;
    result.objective = 0.5 * result.x.dot(prob.P * result.x) + prob.q.dot(result.x) + prob.r;
    return result;
  };

  double polish_at = std::max(settings.tol, 1e-6);
  Vec rhs(n + m), sol(n + m);

  for (int iter = 1; iter <= settings.max_iter; ++iter) {
    rhs.head(n) = settings.sigma * x - s.q;
    rhs.tail(m) = z - y.cwiseQuotient(rho);
    sol = ldlt.solve(rhs);
    const Vec xt = sol.head(n);
    const Vec zt = z + (sol.tail(m) - y).cwiseQuotient(rho);

    x = settings.alpha * xt + (1.0 - settings.alpha) * x;
    const Vec z_ax = settings.alpha * zt + (1.0 - settings.alpha) * z;
    const Vec z_new = (z_ax + y.cwiseQuotient(rho)).cwiseMax(s.l).cwiseMin(s.u);
    dy = rho.cwiseProduct(z_ax - z_new);
    y += dy;
    z = z_new;

    if (iter % settings.check_interval != 0 && iter != settings.max_iter) continue;

    // Residuals in the original (unscaled) problem.
    const Vec x_u = s.D.cwiseProduct(x);
    const Vec y_u = s.E.cwiseProduct(y) / s.c;
    const Vec z_u = z.cwiseQuotient(s.E);
    const Vec Ax = prob.A * x_u;
    const double rp = max_abs(Ax - z_u);
    const double rd = max_abs(prob.P * x_u + prob.q + At * y_u);

    const bool converged = rp <= settings.tol && rd <= settings.tol;
    if (settings.polish && (converged || std::max(rp, rd) <= polish_at)) {
      const PolishOutcome p = try_polish(prob, At, y_u, is_eq, settings.tol);
      if (p.accepted) return finish(p.x, p.y, QpStatus::Optimal, p.rp, p.rd, iter, true);
      polish_at = std::max(settings.tol, std::min(polish_at * 1e-2, std::max(rp, rd) * 1e-2));
    }
    if (converged) return finish(x_u, y_u, QpStatus::Optimal, rp, rd, iter, false);

    // Primal infeasibility certificate from the dual increment.
    const Vec dy_u = s.E.cwiseProduct(dy) / s.c;
    const double ndy = max_abs(dy_u);
    if (ndy > 1e-14) {
      const double support = max_abs(At * dy_u);
      double gap = 0.0;
      bool bounded = true;
      for (int i = 0; i < m; ++i) {
        if (dy_u[i] > 0) {
          if (prob.u[i] >= kInf) {
            if (dy_u[i] > settings.inf_tol * ndy) bounded = false;
          } else {
            gap += prob.u[i] * dy_u[i];
          }
        } else if (dy_u[i] < 0) {
          if (prob.l[i] <= -kInf) {
            if (-dy_u[i] > settings.inf_tol * ndy) bounded = false;
          } else {
            gap += prob.l[i] * dy_u[i];
          }
        }
      }
      if (bounded && support <= settings.inf_tol * ndy && gap <= -settings.inf_tol * ndy) {
        result.certificate = dy_u / ndy;
        return finish(x_u, y_u, QpStatus::PrimalInfeasible, rp, rd, iter, false);
      }
    }

    if (iter % kRhoAdaptInterval == 0 && iter < settings.max_iter) {
      const Vec Axs = s.A * x;
      const Vec Pxs = s.P * x;
      const Vec Atys = Ats * y;
      const double rp_s = max_abs(Axs - z) / std::max({max_abs(Axs), max_abs(z), 1e-10});
      const double rd_s = max_abs(Pxs + s.q + Atys) /
                          std::max({max_abs(Pxs), max_abs(s.q), max_abs(Atys), 1e-10});
      const double ratio = std::sqrt(rp_s / std::max(rd_s, 1e-16));
      if (ratio > 5.0 || ratio < 0.2) {
        rho_base = std::min(std::max(rho_base * ratio, kRhoMin), kRhoMax);
        fill_rho();
        ldlt.factorize(build_kkt(s.P, s.A, settings.sigma, rho));
        if (ldlt.info() != Eigen::Success) throw ValidationError("qp: KKT refactorization failed");
      }
    }

    if (iter == settings.max_iter) return finish(x_u, y_u, QpStatus::MaxIterations, rp, rd, iter, false);
  }
  return result;  // unreachable: max_iter >= 1 always exits above
}

}  // namespace moclqr
