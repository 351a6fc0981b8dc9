#pragma once

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/KLUSupport>

#include <cmath>
#include <memory>
#include <string>

#include "spde/errors.hpp"
#include "spde/fem.hpp"

namespace spde {

enum class LinearSolverKind { kDirect, kIterative };

/// Sparse linear solver for Jacobians sharing one sparsity pattern.
/// The symbolic analysis of the direct path is done once and reused.
class JacobianSolver {
 public:
  explicit JacobianSolver(LinearSolverKind kind = LinearSolverKind::kDirect)
      : kind_(kind), lu_(std::make_unique<Eigen::KLU<SparseMatrix>>()) {}

  LinearSolverKind kind() const noexcept { return kind_; }

  /// Forget the cached pattern (use when the next matrix has a different structure).
  void reset() { analyzed_ = false; }

  Vector solve(const SparseMatrix& J, const Vector& rhs) {
    Vector x;
    if (kind_ == LinearSolverKind::kDirect) {
      if (!analyzed_) {
        lu_->analyzePattern(J);
        analyzed_ = true;
      }
      lu_->factorize(J);
      if (lu_->info() != Eigen::Success) throw SolverError("sparse LU factorization failed (singular Jacobian?)");
      x = lu_->solve(rhs);
      if (lu_->info() != Eigen::Success) throw SolverError("sparse LU solve failed");
    } else {
      iterative_.setTolerance(1e-12);
      iterative_.setMaxIterations(1000);
      iterative_.compute(J);
      if (iterative_.info() != Eigen::Success) throw SolverError("ILU preconditioner setup failed");
      x = iterative_.solve(rhs);
    }
    const double rn = rhs.norm();
    const double res = (J * x - rhs).norm();
    if (!x.allFinite() || res > 1e-8 * rn + 1e-300) {
      throw SolverError("linear solve did not converge (residual " + std::to_string(res) + ")", res);
    }
    return x;
  }

 private:
  LinearSolverKind kind_;
  bool analyzed_ = false;
  std::unique_ptr<Eigen::KLU<SparseMatrix>> lu_;  // holds raw KLU handles, move-only
  Eigen::BiCGSTAB<SparseMatrix, Eigen::IncompleteLUT<double>> iterative_;
};

struct NewtonResult {
  Vector solution;
  int iterations = 0;
  double residual = 0.0;  // scaled residual at exit
};

/// Newton's method for R(u) = 0. Stops once ||R(u)||_2 / scale <= tol;
/// `iterations` counts linear solves.
///
/// `residual(u) -> Vector`, `jacobian(u) -> const SparseMatrix&` (or a value).
template <typename ResidualFn, typename JacobianFn>
NewtonResult newton_solve(ResidualFn&& residual, JacobianFn&& jacobian, Vector u, double tol, int max_iter,
                          JacobianSolver& linear, double scale = 1.0) {
  if (!(tol > 0.0)) throw InvalidParameter("newton_solve: tol must be > 0");
  if (max_iter < 1) throw InvalidParameter("newton_solve: max_iter must be >= 1");
  if (!(scale > 0.0)) scale = 1.0;
  NewtonResult out;
  Vector r = residual(u);
  for (int it = 0;; ++it) {
    const double rel = r.norm() / scale;
    if (!std::isfinite(rel)) throw DivergenceError("newton_solve: non-finite residual");
    out.residual = rel;
    if (rel <= tol) break;
    if (it == max_iter) {
      throw StepFailure("newton_solve: no convergence after " + std::to_string(max_iter) +
                            " iterations (residual " + std::to_string(rel) + ")",
                        rel, it);
    }
    const Vector du = linear.solve(jacobian(u), r);
    u -= du;
    if (!u.allFinite()) throw DivergenceError("newton_solve: non-finite update");
    out.iterations = it + 1;
    r = residual(u);
  }
  out.solution = std::move(u);
  return out;
}

template <typename ResidualFn, typename JacobianFn>
NewtonResult newton_solve(ResidualFn&& residual, JacobianFn&& jacobian, Vector u, double tol, int max_iter) {
  JacobianSolver linear;
  return newton_solve(residual, jacobian, std::move(u), tol, max_iter, linear);
}

}  // namespace spde
