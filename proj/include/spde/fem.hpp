#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spde/errors.hpp"
#include "spde/mesh.hpp"

namespace spde {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;  // column-major

/// Symmetric sparse matrix over a fixed index space.
class SparseOperator {
 public:
  SparseOperator() = default;
  explicit SparseOperator(SparseMatrix m) : m_(std::move(m)) { m_.makeCompressed(); }

  Eigen::Index dimension() const noexcept { return m_.rows(); }
  const SparseMatrix& matrix() const noexcept { return m_; }
  double entry(Eigen::Index i, Eigen::Index j) const { return m_.coeff(i, j); }

  Vector apply(const Vector& x) const { return m_ * x; }
  /// x^T A y
  double form(const Vector& x, const Vector& y) const { return x.dot(m_ * y); }

  bool is_exactly_symmetric() const {
    for (Eigen::Index k = 0; k < m_.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(m_, k); it; ++it) {
        if (m_.coeff(it.col(), it.row()) != it.value()) return false;
      }
    }
    return true;
  }

 private:
  SparseMatrix m_;
};

// ---------------------------------------------------------------------------
// Quadrature

struct QuadraturePoint {
  std::array<double, 3> bary;
  double weight;  // relative to triangle area, weights sum to 1
};

/// Symmetric 7-point rule, exact for polynomials of total degree 5.
inline const std::array<QuadraturePoint, 7>& triangle_rule_order5() {
  static const std::array<QuadraturePoint, 7> rule = [] {
    const double s15 = std::sqrt(15.0);
    const double a1 = (6.0 - s15) / 21.0, b1 = (9.0 + 2.0 * s15) / 21.0;
    const double a2 = (6.0 + s15) / 21.0, b2 = (9.0 - 2.0 * s15) / 21.0;
    const double w1 = (155.0 - s15) / 1200.0, w2 = (155.0 + s15) / 1200.0;
    return std::array<QuadraturePoint, 7>{{
        {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, 9.0 / 40.0},
        {{a1, a1, b1}, w1},
        {{a1, b1, a1}, w1},
        {{b1, a1, a1}, w1},
        {{a2, a2, b2}, w2},
        {{a2, b2, a2}, w2},
        {{b2, a2, a2}, w2},
    }};
  }();
  return rule;
}

inline Point map_barycentric(const Mesh& mesh, std::size_t t, const std::array<double, 3>& bary) {
  const auto& tri = mesh.triangles()[t];
  const auto& V = mesh.vertices();
  Point p{0.0, 0.0};
  for (int k = 0; k < 3; ++k) {
    p.x += bary[k] * V[static_cast<std::size_t>(tri[k])].x;
    p.y += bary[k] * V[static_cast<std::size_t>(tri[k])].y;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Element matrices

using ElementMatrix = std::array<std::array<double, 3>, 3>;

inline ElementMatrix element_mass(double area) {
  ElementMatrix m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = area / 12.0 * (i == j ? 2.0 : 1.0);
  return m;
}

inline ElementMatrix element_stiffness(const Point& p0, const Point& p1, const Point& p2) {
  const std::array<Point, 3> p{p0, p1, p2};
  const double area = 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y));
  // grad(phi_i) = rot90(p_{i+2} - p_{i+1}) / (2 area)
  std::array<std::array<double, 2>, 3> g{};
  for (int i = 0; i < 3; ++i) {
    const Point& a = p[(i + 1) % 3];
    const Point& b = p[(i + 2) % 3];
    g[i] = {(a.y - b.y) / (2.0 * area), (b.x - a.x) / (2.0 * area)};
  }
  ElementMatrix k{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
  return k;
}

namespace detail {

enum class Restriction { kFull, kFree };

template <typename ElementFn>
SparseOperator assemble(const Mesh& mesh, Restriction r, ElementFn&& element) {
  using Triplet = Eigen::Triplet<double>;
  const auto n = static_cast<Eigen::Index>(r == Restriction::kFull ? mesh.num_vertices() : mesh.num_free());
  std::vector<Triplet> trips;
  trips.reserve(9 * mesh.num_triangles());
  const auto& V = mesh.vertices();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const ElementMatrix e = element(t, V[static_cast<std::size_t>(tri[0])], V[static_cast<std::size_t>(tri[1])],
                                    V[static_cast<std::size_t>(tri[2])]);
    for (int i = 0; i < 3; ++i) {
      const int gi = r == Restriction::kFull ? tri[i] : mesh.free_index(tri[i]);
      if (gi < 0) continue;
      for (int j = 0; j < 3; ++j) {
        const int gj = r == Restriction::kFull ? tri[j] : mesh.free_index(tri[j]);
        if (gj < 0) continue;
        trips.emplace_back(gi, gj, e[i][j]);
      }
    }
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(trips.begin(), trips.end());
  return SparseOperator(std::move(m));
}

inline detail::Restriction restriction(bool full) { return full ? Restriction::kFull : Restriction::kFree; }

}  // namespace detail

/// P1 mass matrix. `full` keeps boundary vertices (vertex indexing),
/// otherwise the operator acts on free dofs only.
inline SparseOperator assemble_mass(const Mesh& mesh, bool full = false) {
  return detail::assemble(mesh, detail::restriction(full),
                          [&](std::size_t t, const Point&, const Point&, const Point&) {
                            return element_mass(mesh.signed_area(t));
                          });
}

inline SparseOperator assemble_stiffness(const Mesh& mesh, bool full = false) {
  return detail::assemble(mesh, detail::restriction(full),
                          [](std::size_t, const Point& a, const Point& b, const Point& c) {
                            return element_stiffness(a, b, c);
                          });
}

struct DominanceReport {
  bool pass = true;
  Eigen::Index worst_row = -1;
  double worst_margin = INFINITY;  // diag - sum |offdiag|, minimized over rows
};

/// M-matrix style check: nonpositive off-diagonals and weak diagonal dominance.
inline DominanceReport check_diagonal_dominance(const SparseOperator& op) {
  DominanceReport rep;
  const SparseMatrix& A = op.matrix();
  std::vector<double> diag(static_cast<std::size_t>(A.rows()), 0.0), off(static_cast<std::size_t>(A.rows()), 0.0);
  std::vector<bool> sign_ok(static_cast<std::size_t>(A.rows()), true);
  for (Eigen::Index k = 0; k < A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      const auto r = static_cast<std::size_t>(it.row());
      if (it.row() == it.col()) {
        diag[r] += it.value();
      } else {
        off[r] += std::abs(it.value());
        if (it.value() > kGeomTol) sign_ok[r] = false;
      }
    }
  }
  for (std::size_t r = 0; r < diag.size(); ++r) {
    const double margin = diag[r] - off[r];
    const bool ok = sign_ok[r] && margin >= -kGeomTol;
    if (margin < rep.worst_margin || (!ok && rep.pass)) {
      rep.worst_margin = margin;
      rep.worst_row = static_cast<Eigen::Index>(r);
    }
    rep.pass = rep.pass && ok;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Fields

/// P1 function given by its nodal values on every mesh vertex.
struct Field {
  const Mesh* mesh = nullptr;
  Vector coeffs;

  Field() = default;
  explicit Field(const Mesh& m) : mesh(&m), coeffs(Vector::Zero(static_cast<Eigen::Index>(m.num_vertices()))) {}
  Field(const Mesh& m, Vector c) : mesh(&m), coeffs(std::move(c)) {}

  /// Value at vertex-free-dof ordering (boundary dropped).
  Vector free_values() const {
    Vector u(static_cast<Eigen::Index>(mesh->num_free()));
    for (std::size_t d = 0; d < mesh->num_free(); ++d) {
      u[static_cast<Eigen::Index>(d)] = coeffs[mesh->vertex_of_free(static_cast<int>(d))];
    }
    return u;
  }

  static Field from_free(const Mesh& m, const Vector& u) {
    Field f(m);
    for (std::size_t d = 0; d < m.num_free(); ++d) {
      f.coeffs[m.vertex_of_free(static_cast<int>(d))] = u[static_cast<Eigen::Index>(d)];
    }
    return f;
  }

  bool boundary_is_zero() const {
    for (std::size_t v = 0; v < mesh->num_vertices(); ++v) {
      if (mesh->is_boundary(static_cast<int>(v)) && coeffs[static_cast<Eigen::Index>(v)] != 0.0) return false;
    }
    return true;
  }

  /// Evaluates the P1 interpolant inside triangle t at barycentric coordinates.
  double eval(std::size_t t, const std::array<double, 3>& bary) const {
    const auto& tri = mesh->triangles()[t];
    return bary[0] * coeffs[tri[0]] + bary[1] * coeffs[tri[1]] + bary[2] * coeffs[tri[2]];
  }
};

using ScalarField2D = std::function<double(double, double)>;

/// Nodal interpolation into V_h: f at interior vertices, 0 on the boundary.
inline Field interpolate_nodal(const ScalarField2D& f, const Mesh& mesh) {
  Field out(mesh);
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    if (mesh.is_boundary(static_cast<int>(v))) continue;
    const Point& p = mesh.vertices()[v];
    const double val = f(p.x, p.y);
    if (!std::isfinite(val)) {
      throw EvaluationError("interpolate_nodal: non-finite value at vertex " + std::to_string(v) + " (" +
                            std::to_string(p.x) + ", " + std::to_string(p.y) + ")");
    }
    out.coeffs[static_cast<Eigen::Index>(v)] = val;
  }
  return out;
}

/// Mesh together with its assembled operators. Immutable after construction,
/// safe to share read-only between threads.
class P1Space {
 public:
  explicit P1Space(const Mesh& mesh)
      : mesh_(&mesh),
        mass_(assemble_mass(mesh)),
        stiffness_(assemble_stiffness(mesh)),
        mass_full_(assemble_mass(mesh, true)),
        stiffness_full_(assemble_stiffness(mesh, true)),
        mass_llt_(std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>()) {
    if (mesh.num_free() > 0) {
      mass_llt_->compute(mass_.matrix());
      if (mass_llt_->info() != Eigen::Success) throw SolverError("P1Space: mass matrix is not positive definite");
    }
  }

  const Mesh& mesh() const noexcept { return *mesh_; }
  const SparseOperator& mass() const noexcept { return mass_; }
  const SparseOperator& stiffness() const noexcept { return stiffness_; }
  const SparseOperator& mass_full() const noexcept { return mass_full_; }
  const SparseOperator& stiffness_full() const noexcept { return stiffness_full_; }

  /// Solves M x = b on free dofs and checks the relative residual.
  Vector solve_mass(const Vector& b, double rel_tol = 1e-12) const {
    if (b.size() == 0) return b;
    Vector x = mass_llt_->solve(b);
    const double bn = b.norm();
    const double res = (mass_.matrix() * x - b).norm();
    if (!x.allFinite() || (bn > 0.0 && res > rel_tol * bn)) {
      throw SolverError("mass solve failed, residual " + std::to_string(res), res);
    }
    return x;
  }

 private:
  const Mesh* mesh_;
  SparseOperator mass_;
  SparseOperator stiffness_;
  SparseOperator mass_full_;
  SparseOperator stiffness_full_;
  std::shared_ptr<Eigen::SimplicialLLT<SparseMatrix>> mass_llt_;
};

/// Load vector b_i = \int f phi_i over free dofs, 7-point rule per triangle.
inline Vector load_vector(const ScalarField2D& f, const Mesh& mesh) {
  Vector b = Vector::Zero(static_cast<Eigen::Index>(mesh.num_free()));
  const auto& rule = triangle_rule_order5();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.signed_area(t);
    const auto& tri = mesh.triangles()[t];
    for (const auto& q : rule) {
      const Point p = map_barycentric(mesh, t, q.bary);
      const double fv = f(p.x, p.y);
      if (!std::isfinite(fv)) throw EvaluationError("load_vector: non-finite integrand");
      for (int k = 0; k < 3; ++k) {
        const int d = mesh.free_index(tri[k]);
        if (d >= 0) b[d] += area * q.weight * fv * q.bary[k];
      }
    }
  }
  return b;
}

/// L2 projection onto V_h (zero trace).
inline Field l2_project(const ScalarField2D& f, const P1Space& space) {
  const Vector b = load_vector(f, space.mesh());
  return Field::from_free(space.mesh(), space.solve_mass(b));
}

/// w = Delta_h v, i.e. M w = -K v on free dofs.
inline Field apply_discrete_laplacian(const Field& v, const P1Space& space) {
  const Vector rhs = -(space.stiffness().matrix() * v.free_values());
  return Field::from_free(space.mesh(), space.solve_mass(rhs));
}

enum class NormKind { kL2, kH1Semi, kLp };

/// Lp norm by the order-5 rule applied to |v_h|^p on each triangle.
inline double lp_norm(const Field& v, double p) {
  if (!(p >= 1.0)) throw InvalidParameter("lp_norm: p must be >= 1");
  const Mesh& mesh = *v.mesh;
  const auto& rule = triangle_rule_order5();
  double acc = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    double local = 0.0;
    for (const auto& q : rule) local += q.weight * std::pow(std::abs(v.eval(t, q.bary)), p);
    acc += mesh.signed_area(t) * local;
  }
  return std::pow(acc, 1.0 / p);
}

inline double norm(const Field& v, const P1Space& space, NormKind kind, double p = 2.0) {
  switch (kind) {
    case NormKind::kL2:
      return std::sqrt(std::max(0.0, space.mass_full().form(v.coeffs, v.coeffs)));
    case NormKind::kH1Semi:
      return std::sqrt(std::max(0.0, space.stiffness_full().form(v.coeffs, v.coeffs)));
    case NormKind::kLp:
      return lp_norm(v, p);
  }
  return 0.0;
}

/// ||v_h - f||_{L2}, each triangle split `refine` times into 4 before the 7-point rule.
inline double l2_error(const Field& v, const ScalarField2D& f, int refine = 0) {
  const Mesh& mesh = *v.mesh;
  const auto& rule = triangle_rule_order5();
  const int n = 1 << refine;  // sub-triangles per edge
  double acc = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const double sub_area = mesh.signed_area(t) / (static_cast<double>(n) * n);
    // Sub-triangles of a regular n-subdivision in barycentric lattice coordinates.
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j + i < n; ++j) {
        for (int flip = 0; flip < 2; ++flip) {
          if (flip == 1 && i + j + 1 >= n) continue;
          std::array<std::array<double, 2>, 3> c;
          if (flip == 0) {
            c = {{{double(i), double(j)}, {double(i + 1), double(j)}, {double(i), double(j + 1)}}};
          } else {
            c = {{{double(i + 1), double(j)}, {double(i + 1), double(j + 1)}, {double(i), double(j + 1)}}};
          }
          for (const auto& q : rule) {
            const double s = (q.bary[0] * c[0][0] + q.bary[1] * c[1][0] + q.bary[2] * c[2][0]) / n;
            const double r = (q.bary[0] * c[0][1] + q.bary[1] * c[1][1] + q.bary[2] * c[2][1]) / n;
            const std::array<double, 3> bary{1.0 - s - r, s, r};
            const Point p = map_barycentric(mesh, t, bary);
            const double d = v.eval(t, bary) - f(p.x, p.y);
            acc += sub_area * q.weight * d * d;
          }
        }
      }
    }
  }
  return std::sqrt(acc);
}

struct EigenEstimate {
  double value = 0.0;
  int iterations = 0;
  Vector vector;
};

/// Smallest eigenvalue of -Delta_h (generalized problem K x = lambda M x) by inverse iteration.
inline EigenEstimate smallest_laplacian_eigenvalue(const P1Space& space, double rel_tol = 1e-12, int max_iter = 500) {
  const SparseMatrix& K = space.stiffness().matrix();
  const SparseMatrix& M = space.mass().matrix();
  Eigen::SimplicialLLT<SparseMatrix> llt(K);
  if (llt.info() != Eigen::Success) throw SolverError("stiffness factorization failed");
  EigenEstimate est;
  Vector x = Vector::Ones(K.rows());
  double lambda_prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    x = llt.solve(M * x);
    x /= std::sqrt(x.dot(M * x));
    const double lambda = x.dot(K * x);
    est.iterations = it;
    est.value = lambda;
    if (it > 1 && std::abs(lambda - lambda_prev) <= rel_tol * lambda) break;
    lambda_prev = lambda;
  }
  est.vector = std::move(x);
  return est;
}

}  // namespace spde
