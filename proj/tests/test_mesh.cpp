#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "spde/mesh.hpp"

namespace spde {
namespace {

// Independent angle oracle: interior angle at `apex` from atan2, then 1/tan.
double oracle_cot(Point apex, Point a, Point b) {
  const double ang_a = std::atan2(a.y - apex.y, a.x - apex.x);
  const double ang_b = std::atan2(b.y - apex.y, b.x - apex.x);
  double theta = std::abs(ang_a - ang_b);
  if (theta > M_PI) theta = 2.0 * M_PI - theta;
  return 1.0 / std::tan(theta);
}

// Brute force: for every vertex pair, collect triangles containing both.
std::map<std::pair<int, int>, double> oracle_cot_sums(const Mesh& m) {
  std::map<std::pair<int, int>, double> out;
  const auto& V = m.vertices();
  for (int a = 0; a < static_cast<int>(V.size()); ++a) {
    for (int b = a + 1; b < static_cast<int>(V.size()); ++b) {
      double sum = 0.0;
      int shared = 0;
      for (const auto& tri : m.triangles()) {
        bool has_a = false, has_b = false;
        int apex = -1;
        for (int v : tri) {
          if (v == a) has_a = true;
          else if (v == b) has_b = true;
          else apex = v;
        }
        if (has_a && has_b) {
          ++shared;
          sum += oracle_cot(V[apex], V[a], V[b]);
        }
      }
      if (shared == 2) out[{a, b}] = sum;
    }
  }
  return out;
}

TEST(StructuredMesh, SingleCell) {
  const Mesh m = build_structured_mesh(2.0, 1, {-1.0, -1.0});
  EXPECT_EQ(m.num_vertices(), 4u);
  EXPECT_EQ(m.num_triangles(), 2u);
  EXPECT_EQ(m.interior_edges().size(), 1u);
  EXPECT_EQ(m.num_free(), 0u);
}

TEST(StructuredMesh, TwoByTwoHasOneInteriorVertex) {
  const Mesh m = build_structured_mesh(2.0, 2, {-1.0, -1.0});
  EXPECT_EQ(m.num_vertices(), 9u);
  EXPECT_EQ(m.num_triangles(), 8u);
  ASSERT_EQ(m.num_free(), 1u);
  const Point p = m.vertices()[static_cast<std::size_t>(m.vertex_of_free(0))];
  EXPECT_DOUBLE_EQ(p.x, 0.0);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
}

TEST(StructuredMesh, RejectsBadParameters) {
  EXPECT_THROW(build_structured_mesh(2.0, 0), InvalidParameter);
  EXPECT_THROW(build_structured_mesh(0.0, 4), InvalidParameter);
  EXPECT_THROW(build_structured_mesh(-1.0, 4), InvalidParameter);
}

TEST(StructuredMesh, Invariants) {
  for (int n : {1, 2, 3, 7, 16}) {
    const Mesh m = build_structured_mesh(1.5, n, {0.25, -0.5});
    for (std::size_t t = 0; t < m.num_triangles(); ++t) EXPECT_GT(m.signed_area(t), 0.0);
    EXPECT_EQ(m.num_free(), static_cast<std::size_t>((n - 1) * (n - 1)));
    // Euler: E = V + T - 1 for a disk; interior + boundary edges.
    EXPECT_EQ(m.interior_edges().size() + m.boundary_edges().size(), m.num_vertices() + m.num_triangles() - 1);
    EXPECT_EQ(m.boundary_edges().size(), static_cast<std::size_t>(4 * n));
    for (std::size_t d = 0; d < m.num_free(); ++d) {
      EXPECT_EQ(m.free_index(m.vertex_of_free(static_cast<int>(d))), static_cast<int>(d));
    }
    for (std::size_t v = 0; v < m.num_vertices(); ++v) {
      const Point p = m.vertices()[v];
      const bool on = p.x == 0.25 || p.x == 1.75 || p.y == -0.5 || p.y == 1.0;
      EXPECT_EQ(on, m.is_boundary(static_cast<int>(v)));
    }
  }
}

TEST(MeshFromTriangles, RejectsInvertedTriangle) {
  std::vector<Point> v{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_THROW(Mesh::from_triangles(v, {{0, 2, 1}, {0, 2, 3}}, {0, 0}, 1.0), InvalidParameter);
  EXPECT_THROW(Mesh::from_triangles(v, {{0, 1, 7}}, {0, 0}, 1.0), InvalidParameter);
}

TEST(MeshCondition, StructuredMeshesPass) {
  for (int n : {1, 2, 5, 20, 40}) {
    const auto rep = check_mesh_condition(build_structured_mesh(2.0, n, {-1.0, -1.0}));
    EXPECT_TRUE(rep.pass) << "n_div=" << n;
    for (const auto& e : rep.edges) EXPECT_GE(e.cot_sum, -kGeomTol);
  }
}

TEST(MeshCondition, SingleCellDiagonal) {
  const auto rep = check_mesh_condition(build_structured_mesh(2.0, 1, {-1.0, -1.0}));
  ASSERT_EQ(rep.edges.size(), 1u);
  EXPECT_NEAR(rep.edges[0].cot_sum, 0.0, 1e-15);
  EXPECT_TRUE(rep.pass);
}

TEST(MeshCondition, DisplacedVertexFailsOnOracleEdges) {
  Mesh base = build_structured_mesh(2.0, 2, {0.0, 0.0});
  auto verts = base.vertices();
  // Pull the centre vertex close to the chord between (1,0) and (2,1): the
  // angle opposite that edge approaches pi.
  verts[4] = {1.4, 0.55};
  const Mesh m = Mesh::from_triangles(verts, base.triangles(), {0.0, 0.0}, 2.0);
  const auto oracle = oracle_cot_sums(m);
  const auto rep = check_mesh_condition(m);
  ASSERT_EQ(rep.edges.size(), oracle.size());
  EXPECT_FALSE(rep.pass);
  std::vector<std::pair<int, int>> failing;
  for (const auto& e : rep.edges) {
    const double expected = oracle.at({e.vertices[0], e.vertices[1]});
    EXPECT_NEAR(e.cot_sum, expected, 1e-12);
    EXPECT_EQ(e.pass, expected >= -kGeomTol);
    if (!e.pass) failing.emplace_back(e.vertices[0], e.vertices[1]);
  }
  const std::vector<std::pair<int, int>> expected_failing{{0, 4}, {1, 5}, {4, 8}};
  EXPECT_EQ(failing, expected_failing);
  // (1,0)-(2,1): right angle at (2,0) plus the obtuse angle at the moved vertex.
  EXPECT_NEAR(rep.worst_cot_sum, -3.25, 1e-12);
}

}  // namespace
}  // namespace spde
