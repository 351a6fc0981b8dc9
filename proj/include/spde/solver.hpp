#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spde/errors.hpp"
#include "spde/fem.hpp"
#include "spde/model.hpp"
#include "spde/newton.hpp"
#include "spde/random.hpp"

namespace spde {

enum class Scheme { kMilstein, kEulerMaruyama };

inline const char* to_string(Scheme s) { return s == Scheme::kMilstein ? "milstein" : "euler_maruyama"; }

inline constexpr double kDivergenceThreshold = 1e12;

struct SchemeConfig {
  double tau = 1e-3;
  double T = 1.0;
  Scheme scheme = Scheme::kMilstein;
  double newton_tol = 1e-10;
  int newton_max_iter = 50;
  LinearSolverKind linear_solver = LinearSolverKind::kDirect;

  /// Number of steps N = T / tau; throws unless it is an integer.
  std::size_t steps() const {
    if (!(tau > 0.0) || !(T > 0.0)) throw InvalidParameter("scheme: tau and T must be positive");
    const double n = T / tau;
    const double rounded = std::round(n);
    if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * rounded) {
      throw InvalidParameter("scheme: T / tau = " + std::to_string(n) + " is not an integer step count");
    }
    return static_cast<std::size_t>(rounded);
  }

  void validate() const {
    steps();
    if (!(newton_tol > 0.0)) throw InvalidParameter("scheme: newton_tol must be > 0");
    if (newton_max_iter < 1) throw InvalidParameter("scheme: newton_max_iter must be >= 1");
  }
};

/// Per-worker scratch for the implicit step. Holds A = M + tau K and a
/// Jacobian buffer with the same sparsity pattern as M, so the Jacobian
/// M + tau K - tau M diag(F'(U)) is refreshed value-by-value per column.
class StepWorkspace {
 public:
  StepWorkspace(const P1Space& space, const Model& model, const SchemeConfig& cfg)
      : space_(&space), model_(model), cfg_(cfg), linear_(cfg.linear_solver) {
    cfg_.validate();
    const SparseMatrix& M = space.mass().matrix();
    const SparseMatrix& K = space.stiffness().matrix();
    A_ = M + cfg_.tau * K;
    A_.makeCompressed();
    if (pattern_equal(A_, M)) {
      M_on_A_ = M;
    } else {
      // Align M to A's pattern with explicit zeros.
      M_on_A_ = A_;
      M_on_A_.coeffs().setZero();
      M_on_A_ += M;
      M_on_A_.makeCompressed();
    }
    same_pattern_ = pattern_equal(A_, M_on_A_);
    J_ = A_;
    const auto n = static_cast<Eigen::Index>(space.mesh().num_free());
    f_.resize(n);
    df_.resize(n);
    tmp_.resize(n);
  }

  const P1Space& space() const noexcept { return *space_; }
  const Model& model() const noexcept { return model_; }
  const SchemeConfig& config() const noexcept { return cfg_; }
  int last_iterations() const noexcept { return last_iterations_; }
  double last_residual() const noexcept { return last_residual_; }

  /// Right-hand side M (u + dW G(u) + bracket DG G(u)) with nodal G terms.
  Vector step_rhs(const Vector& u, double dW, Scheme scheme) const {
    const double br = scheme == Scheme::kMilstein ? milstein_bracket(dW, cfg_.tau) : 0.0;
    Vector w(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const DiffusionValues d = model_.diffusion.eval(u[i]);
      w[i] = u[i] + dW * d.g + br * d.dg_g;
    }
    return space_->mass().matrix() * w;
  }

  /// R(U) = (M + tau K) U - tau M F(U) - rhs
  Vector residual(const Vector& U, const Vector& rhs) {
    for (Eigen::Index i = 0; i < U.size(); ++i) f_[i] = model_.drift.value(U[i]);
    tmp_.noalias() = space_->mass().matrix() * f_;
    Vector r = A_ * U;
    r -= cfg_.tau * tmp_;
    r -= rhs;
    return r;
  }

  /// J(U) = M + tau K - tau M diag(F'(U))
  const SparseMatrix& jacobian(const Vector& U) {
    for (Eigen::Index i = 0; i < U.size(); ++i) df_[i] = model_.drift.derivative(U[i]);
    if (same_pattern_) {
      const double* a = A_.valuePtr();
      const double* m = M_on_A_.valuePtr();
      double* j = J_.valuePtr();
      for (Eigen::Index col = 0; col < J_.outerSize(); ++col) {
        const double s = cfg_.tau * df_[col];
        for (auto k = J_.outerIndexPtr()[col]; k < J_.outerIndexPtr()[col + 1]; ++k) j[k] = a[k] - s * m[k];
      }
    } else {
      J_ = A_ - cfg_.tau * (space_->mass().matrix() * df_.asDiagonal());
      linear_.reset();
    }
    return J_;
  }

  /// One implicit step on free-dof coefficients.
  Vector advance(const Vector& u, double dW, Scheme scheme) {
    const Vector rhs = step_rhs(u, dW, scheme);
    const double bn = rhs.norm();
    const double scale = bn > 0.0 ? bn : 1.0;
    NewtonResult res = newton_solve([&](const Vector& U) { return residual(U, rhs); },
                                    [&](const Vector& U) -> const SparseMatrix& { return jacobian(U); }, u,
                                    cfg_.newton_tol, cfg_.newton_max_iter, linear_, scale);
    last_iterations_ = res.iterations;
    last_residual_ = res.residual;
    return std::move(res.solution);
  }

 private:
  static bool pattern_equal(const SparseMatrix& a, const SparseMatrix& b) {
    if (a.outerSize() != b.outerSize() || a.nonZeros() != b.nonZeros()) return false;
    for (Eigen::Index k = 0; k <= a.outerSize(); ++k) {
      if (a.outerIndexPtr()[k] != b.outerIndexPtr()[k]) return false;
    }
    for (Eigen::Index k = 0; k < a.nonZeros(); ++k) {
      if (a.innerIndexPtr()[k] != b.innerIndexPtr()[k]) return false;
    }
    return true;
  }

  const P1Space* space_;
  Model model_;
  SchemeConfig cfg_;
  SparseMatrix A_;
  SparseMatrix M_on_A_;
  SparseMatrix J_;
  bool same_pattern_ = false;
  JacobianSolver linear_;
  Vector f_, df_, tmp_;
  int last_iterations_ = 0;
  double last_residual_ = 0.0;
};

/// U^{n+1} from the Milstein-corrected semi-implicit step.
inline Field milstein_step(const Field& U_n, double dW, StepWorkspace& ws) {
  return Field::from_free(ws.space().mesh(), ws.advance(U_n.free_values(), dW, Scheme::kMilstein));
}

/// Same step without the ((dW)^2 - tau)/2 correction.
inline Field euler_maruyama_step(const Field& U_n, double dW, StepWorkspace& ws) {
  return Field::from_free(ws.space().mesh(), ws.advance(U_n.free_values(), dW, Scheme::kEulerMaruyama));
}

struct TrajectoryMonitors {
  /// Step indices n (0..N) at which the full field is stored.
  std::set<std::size_t> snapshot_steps;
  /// Also record ||U^n||_{L^{q+1}} (quadrature, more expensive).
  bool lp_norm = true;
};

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<double> l2;          // ||U^n||_{L2}
  std::vector<double> h1;          // ||grad U^n||_{L2}
  std::vector<double> lp;          // ||U^n||_{L^{q+1}} when monitored
  double lp_exponent = 2.0;
  std::vector<int> newton_iterations;  // per step n >= 1 (index 0 unused, = 0)
  std::vector<std::pair<std::size_t, Field>> snapshots;
};

/// Exponent q+1 of the monitored Lp norm for the drift's top degree q.
inline double monitored_lp_exponent(const DriftSpec& drift) {
  return std::max(2.0, static_cast<double>(drift.degree() + 1));
}

/// Observer invoked as (n, free coefficients of U^n) for n = 0..N.
using StepObserver = std::function<void(std::size_t, const Vector&)>;

/// Runs N = increments.size() steps from free coefficients u0. Annotates
/// failures with the step index and applies the divergence guard.
inline Vector integrate(Vector u, const std::vector<double>& increments, Scheme scheme, StepWorkspace& ws,
                        const StepObserver& observe, std::vector<int>* iterations = nullptr) {
  const SparseMatrix& M = ws.space().mass().matrix();
  const SparseMatrix& K = ws.space().stiffness().matrix();
  if (observe) observe(0, u);
  for (std::size_t n = 0; n < increments.size(); ++n) {
    try {
      u = ws.advance(u, increments[n], scheme);
    } catch (const StepFailure& e) {
      throw StepFailure("step " + std::to_string(n + 1) + ": " + e.what(), e.residual(), e.iterations());
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(n + 1) + ": " + e.what(), e.residual());
    } catch (const DivergenceError& e) {
      throw DivergenceError("step " + std::to_string(n + 1) + ": " + e.what());
    }
    const double l2sq = u.dot(M * u), h1sq = u.dot(K * u);
    if (!std::isfinite(l2sq) || !std::isfinite(h1sq) || l2sq > kDivergenceThreshold * kDivergenceThreshold ||
        h1sq > kDivergenceThreshold * kDivergenceThreshold) {
      throw DivergenceError("step " + std::to_string(n + 1) + ": norm exceeded divergence guard");
    }
    if (iterations) iterations->push_back(ws.last_iterations());
    if (observe) observe(n + 1, u);
  }
  return u;
}

/// Iterates the scheme from U_0 over the given increments and records norms.
inline TrajectoryRecord run_trajectory(const Field& U_0, const std::vector<double>& increments, StepWorkspace& ws,
                                       const TrajectoryMonitors& monitors = {}) {
  const SchemeConfig& cfg = ws.config();
  const std::size_t N = cfg.steps();
  if (increments.size() != N) {
    throw InvalidParameter("run_trajectory: expected " + std::to_string(N) + " increments, got " +
                           std::to_string(increments.size()));
  }
  const P1Space& space = ws.space();
  const Mesh& mesh = space.mesh();
  TrajectoryRecord rec;
  rec.lp_exponent = monitored_lp_exponent(ws.model().drift);
  rec.newton_iterations.push_back(0);
  const SparseMatrix& M = space.mass().matrix();
  const SparseMatrix& K = space.stiffness().matrix();
  auto observe = [&](std::size_t n, const Vector& u) {
    rec.times.push_back(static_cast<double>(n) * cfg.tau);
    rec.l2.push_back(std::sqrt(std::max(0.0, u.dot(M * u))));
    rec.h1.push_back(std::sqrt(std::max(0.0, u.dot(K * u))));
    const bool snap = monitors.snapshot_steps.count(n) > 0;
    if (monitors.lp_norm || snap) {
      Field f = Field::from_free(mesh, u);
      if (monitors.lp_norm) rec.lp.push_back(lp_norm(f, rec.lp_exponent));
      if (snap) rec.snapshots.emplace_back(n, std::move(f));
    }
  };
  std::vector<int> its;
  integrate(U_0.free_values(), increments, cfg.scheme, ws, observe, &its);
  rec.newton_iterations.insert(rec.newton_iterations.end(), its.begin(), its.end());
  return rec;
}

}  // namespace spde
