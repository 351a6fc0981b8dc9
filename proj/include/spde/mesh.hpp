#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

inline constexpr double kGeomTol = 1e-12;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Triangle = std::array<int, 3>;

struct InteriorEdge {
  std::array<int, 2> vertices;   // sorted endpoint indices
  std::array<int, 2> triangles;  // the two adjacent triangles
};

/// Conforming triangulation of an axis-aligned square [origin, origin + L]^2.
///
/// Vertices on the square's boundary carry homogeneous Dirichlet data; the
/// remaining vertices are numbered consecutively as free degrees of freedom.
class Mesh {
 public:
  Mesh() = default;

  /// Builds connectivity from raw vertices/triangles and validates every
  /// structural invariant. Throws InvalidParameter on violation.
  static Mesh from_triangles(std::vector<Point> vertices, std::vector<Triangle> triangles,
                             Point origin, double side) {
    Mesh m;
    m.vertices_ = std::move(vertices);
    m.triangles_ = std::move(triangles);
    m.origin_ = origin;
    m.side_ = side;
    m.finalize();
    return m;
  }

  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  const std::vector<InteriorEdge>& interior_edges() const noexcept { return interior_edges_; }
  const std::vector<std::array<int, 2>>& boundary_edges() const noexcept { return boundary_edges_; }
  const std::vector<bool>& boundary_mask() const noexcept { return boundary_; }

  std::size_t num_vertices() const noexcept { return vertices_.size(); }
  std::size_t num_triangles() const noexcept { return triangles_.size(); }
  std::size_t num_free() const noexcept { return free_to_vertex_.size(); }

  /// Free-dof index of a vertex, or -1 for boundary vertices.
  int free_index(int vertex) const { return vertex_to_free_[static_cast<std::size_t>(vertex)]; }
  int vertex_of_free(int dof) const { return free_to_vertex_[static_cast<std::size_t>(dof)]; }
  const std::vector<int>& free_dofs() const noexcept { return free_to_vertex_; }

  bool is_boundary(int vertex) const { return boundary_[static_cast<std::size_t>(vertex)]; }

  Point origin() const noexcept { return origin_; }
  double side() const noexcept { return side_; }

  double signed_area(std::size_t t) const {
    const auto& tri = triangles_[t];
    const Point& a = vertices_[static_cast<std::size_t>(tri[0])];
    const Point& b = vertices_[static_cast<std::size_t>(tri[1])];
    const Point& c = vertices_[static_cast<std::size_t>(tri[2])];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  /// Longest edge over all triangles.
  double max_edge_length() const {
    double h = 0.0;
    for (const auto& tri : triangles_) {
      for (int k = 0; k < 3; ++k) {
        const Point& p = vertices_[static_cast<std::size_t>(tri[k])];
        const Point& q = vertices_[static_cast<std::size_t>(tri[(k + 1) % 3])];
        h = std::max(h, std::hypot(p.x - q.x, p.y - q.y));
      }
    }
    return h;
  }

 private:
  bool on_square_boundary(const Point& p) const {
    const double tol = kGeomTol * std::max(1.0, side_);
    const double x0 = origin_.x, y0 = origin_.y, x1 = origin_.x + side_, y1 = origin_.y + side_;
    return std::abs(p.x - x0) <= tol || std::abs(p.x - x1) <= tol || std::abs(p.y - y0) <= tol ||
           std::abs(p.y - y1) <= tol;
  }

  void finalize() {
    if (!(side_ > 0.0)) throw InvalidParameter("mesh: side length must be positive");
    const int nv = static_cast<int>(vertices_.size());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      for (int v : triangles_[t]) {
        if (v < 0 || v >= nv) {
          throw InvalidParameter("mesh: triangle " + std::to_string(t) + " has out-of-range vertex");
        }
      }
      if (!(signed_area(t) > 0.0)) {
        throw InvalidParameter("mesh: triangle " + std::to_string(t) + " has non-positive signed area");
      }
    }

    std::map<std::pair<int, int>, std::vector<int>> edge_tris;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      for (int k = 0; k < 3; ++k) {
        int a = tri[k], b = tri[(k + 1) % 3];
        if (a > b) std::swap(a, b);
        edge_tris[{a, b}].push_back(static_cast<int>(t));
      }
    }

    // Boundary vertices are exactly those on boundary edges; they must sit on the square.
    boundary_.assign(vertices_.size(), false);
    interior_edges_.clear();
    boundary_edges_.clear();
    for (const auto& [edge, tris] : edge_tris) {
      if (tris.size() == 1) {
        boundary_edges_.push_back({edge.first, edge.second});
        boundary_[static_cast<std::size_t>(edge.first)] = true;
        boundary_[static_cast<std::size_t>(edge.second)] = true;
      } else if (tris.size() == 2) {
        interior_edges_.push_back({{edge.first, edge.second}, {tris[0], tris[1]}});
      } else {
        throw InvalidParameter("mesh: edge (" + std::to_string(edge.first) + "," +
                               std::to_string(edge.second) + ") shared by more than 2 triangles");
      }
    }
    for (int v = 0; v < nv; ++v) {
      if (boundary_[static_cast<std::size_t>(v)] && !on_square_boundary(vertices_[static_cast<std::size_t>(v)])) {
        throw InvalidParameter("mesh: boundary vertex " + std::to_string(v) + " is not on the square boundary");
      }
    }

    vertex_to_free_.assign(vertices_.size(), -1);
    free_to_vertex_.clear();
    for (int v = 0; v < nv; ++v) {
      if (!boundary_[static_cast<std::size_t>(v)]) {
        vertex_to_free_[static_cast<std::size_t>(v)] = static_cast<int>(free_to_vertex_.size());
        free_to_vertex_.push_back(v);
      }
    }
  }

  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<InteriorEdge> interior_edges_;
  std::vector<std::array<int, 2>> boundary_edges_;
  std::vector<bool> boundary_;
  std::vector<int> vertex_to_free_;
  std::vector<int> free_to_vertex_;
  Point origin_{};
  double side_ = 1.0;
};

/// Uniform (n_div+1)^2 grid on [origin, origin+L]^2, every cell split along
/// the lower-left to upper-right diagonal. All triangles are right isosceles.
inline Mesh build_structured_mesh(double side, int n_div, Point origin = {0.0, 0.0}) {
  if (n_div < 1) throw InvalidParameter("build_structured_mesh: n_div must be >= 1");
  if (!(side > 0.0) || !std::isfinite(side)) {
    throw InvalidParameter("build_structured_mesh: side length must be positive");
  }
  const int n1 = n_div + 1;
  const double h = side / n_div;
  std::vector<Point> verts;
  verts.reserve(static_cast<std::size_t>(n1) * n1);
  for (int j = 0; j < n1; ++j) {
    for (int i = 0; i < n1; ++i) {
      // Snap the last row/column exactly onto the boundary.
      const double x = (i == n_div) ? origin.x + side : origin.x + i * h;
      const double y = (j == n_div) ? origin.y + side : origin.y + j * h;
      verts.push_back({x, y});
    }
  }
  std::vector<Triangle> tris;
  tris.reserve(2 * static_cast<std::size_t>(n_div) * n_div);
  for (int j = 0; j < n_div; ++j) {
    for (int i = 0; i < n_div; ++i) {
      const int v00 = j * n1 + i, v10 = v00 + 1, v01 = v00 + n1, v11 = v01 + 1;
      tris.push_back({v00, v10, v11});
      tris.push_back({v00, v11, v01});
    }
  }
  return Mesh::from_triangles(std::move(verts), std::move(tris), origin, side);
}

struct EdgeConditionEntry {
  std::array<int, 2> vertices;
  double cot_sum;
  bool pass;
};

struct MeshConditionReport {
  std::vector<EdgeConditionEntry> edges;
  bool pass = true;
  double worst_cot_sum = 0.0;
};

namespace detail {

/// Cotangent of the angle at vertex `apex` opposite the edge (a, b).
inline double cot_at(const Point& apex, const Point& a, const Point& b) {
  const double ux = a.x - apex.x, uy = a.y - apex.y;
  const double vx = b.x - apex.x, vy = b.y - apex.y;
  const double dot = ux * vx + uy * vy;
  const double cross = std::abs(ux * vy - uy * vx);
  return dot / cross;
}

inline int opposite_vertex(const Triangle& tri, int a, int b) {
  for (int v : tri) {
    if (v != a && v != b) return v;
  }
  return -1;
}

}  // namespace detail

/// Angle condition on interior edges: the two angles opposite each interior
/// edge must have a nonnegative cotangent sum (the 2D Delaunay criterion).
inline MeshConditionReport check_mesh_condition(const Mesh& mesh) {
  MeshConditionReport report;
  report.edges.reserve(mesh.interior_edges().size());
  report.worst_cot_sum = mesh.interior_edges().empty() ? 0.0 : INFINITY;
  const auto& V = mesh.vertices();
  for (const auto& e : mesh.interior_edges()) {
    const Point& a = V[static_cast<std::size_t>(e.vertices[0])];
    const Point& b = V[static_cast<std::size_t>(e.vertices[1])];
    double sum = 0.0;
    for (int t : e.triangles) {
      const int apex = detail::opposite_vertex(mesh.triangles()[static_cast<std::size_t>(t)], e.vertices[0], e.vertices[1]);
      sum += detail::cot_at(V[static_cast<std::size_t>(apex)], a, b);
    }
    const bool ok = sum >= -kGeomTol;
    report.edges.push_back({e.vertices, sum, ok});
    report.pass = report.pass && ok;
    report.worst_cot_sum = std::min(report.worst_cot_sum, sum);
  }
  return report;
}

}  // namespace spde
