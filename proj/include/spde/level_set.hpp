#pragma once

#include <cmath>
#include <vector>

#include "spde/fem.hpp"

namespace spde {

struct Segment {
  Point a;
  Point b;
  std::size_t triangle = 0;
};

/// Zero contour of a P1 field, one segment per triangle crossed by the
/// contour. A vertex value of exactly 0 counts as positive.
inline std::vector<Segment> zero_level_set(const Field& v) {
  const Mesh& mesh = *v.mesh;
  const auto& V = mesh.vertices();
  std::vector<Segment> out;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    Point hits[2];
    int n_hits = 0;
    for (int k = 0; k < 3; ++k) {
      const int i = tri[k], j = tri[(k + 1) % 3];
      const double vi = v.coeffs[i], vj = v.coeffs[j];
      if ((vi >= 0.0) == (vj >= 0.0)) continue;
      const double s = vi / (vi - vj);
      const Point& pi = V[static_cast<std::size_t>(i)];
      const Point& pj = V[static_cast<std::size_t>(j)];
      hits[n_hits++] = {pi.x + s * (pj.x - pi.x), pi.y + s * (pj.y - pi.y)};
    }
    // A linear function changes sign across either zero or exactly two edges.
    // Both hits coincide when the contour only touches a zero vertex; skip those.
    if (n_hits == 2 && (hits[0].x != hits[1].x || hits[0].y != hits[1].y)) out.push_back({hits[0], hits[1], t});
  }
  return out;
}

struct RadiusStats {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Distance statistics of segment endpoints from a center point.
inline RadiusStats level_set_radius(const std::vector<Segment>& segs, Point center = {0.0, 0.0}) {
  RadiusStats s;
  if (segs.empty()) return s;
  s.min = INFINITY;
  s.max = 0.0;
  double sum = 0.0;
  for (const auto& seg : segs) {
    for (const Point& p : {seg.a, seg.b}) {
      const double r = std::hypot(p.x - center.x, p.y - center.y);
      sum += r;
      s.min = std::min(s.min, r);
      s.max = std::max(s.max, r);
      ++s.count;
    }
  }
  s.mean = sum / static_cast<double>(s.count);
  return s;
}

}  // namespace spde
