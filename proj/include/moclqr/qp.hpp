#pragma once

// Convex QP engine used for every subproblem in the planner:
//
//   minimize    1/2 x' P x + q' x  (+ constant term r)
//   subject to  l <= A x <= u
//
// solved by operator splitting (ADMM) with Ruiz equilibration, per-row step
// sizes, adaptive step-size updates, and an active-set polish step that
// refines converged iterates to near machine precision.  Primal infeasibility
// is detected through a separating-certificate test on the dual update.

#include "moclqr/model.hpp"

#include <Eigen/Sparse>

namespace moclqr {

using SpMat = Eigen::SparseMatrix<double>;

struct QpProblem {
  SpMat P;    // n x n, symmetric positive semidefinite
  Vec q;      // n
  double r = 0.0;  // constant objective offset, reported in the objective
  SpMat A;    // m x n
  Vec l, u;   // m, with l <= u; rows with l == u are equalities
};

enum class QpStatus { Optimal, PrimalInfeasible, MaxIterations };

struct QpSolution {
  Vec x;                   // primal
  Vec y;                   // dual of l <= Ax <= u (negative at lower bounds)
  double objective = 0.0;  // 1/2 x'Px + q'x + r at the returned primal
  QpStatus status = QpStatus::MaxIterations;
  double primal_residual = 0.0;  // max violation of l <= Ax <= u
  double dual_residual = 0.0;    // ||Px + q + A'y||_inf
  Vec certificate;               // primal-infeasibility certificate (else empty)
  int iterations = 0;
  bool polished = false;
};

struct QpSettings {
  double tol = 1e-8;       // absolute KKT residual tolerance for Optimal
  int max_iter = 200000;
  double sigma = 1e-6;     // proximal regularization
  double alpha = 1.6;      // relaxation
  double rho0 = 0.1;       // base step size; equality rows get rho0 * 1e3
  bool scaling = true;     // Ruiz equilibration
  bool polish = true;
  int check_interval = 25;
  double inf_tol = 1e-8;   // relative certificate tolerance
};

QpSolution solve_qp(const QpProblem& prob, const QpSettings& settings = {});

}  // namespace moclqr
