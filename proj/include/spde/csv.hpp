#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spde/errors.hpp"
#include "spde/fem.hpp"
#include "spde/level_set.hpp"

namespace spde {

/// Round-trip exact, locale independent number formatting.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidParameter("cannot open output file " + path.string());
  return os;
}

inline void write_comments(std::ostream& os, const std::vector<std::string>& comments) {
  for (const auto& c : comments) os << "# " << c << '\n';
}

/// `x,y,value`, one row per vertex in vertex order.
inline void write_field_csv(std::ostream& os, const Field& f, const std::vector<std::string>& comments = {}) {
  write_comments(os, comments);
  os << "x,y,value\n";
  const auto& V = f.mesh->vertices();
  for (std::size_t i = 0; i < V.size(); ++i) {
    os << format_real(V[i].x) << ',' << format_real(V[i].y) << ','
       << format_real(f.coeffs[static_cast<Eigen::Index>(i)]) << '\n';
  }
}

/// `x0,y0,x1,y1` per segment.
inline void write_level_set_csv(std::ostream& os, const std::vector<Segment>& segs,
                                const std::vector<std::string>& comments = {}) {
  write_comments(os, comments);
  os << "x0,y0,x1,y1\n";
  for (const auto& s : segs) {
    os << format_real(s.a.x) << ',' << format_real(s.a.y) << ',' << format_real(s.b.x) << ','
       << format_real(s.b.y) << '\n';
  }
}

}  // namespace spde
