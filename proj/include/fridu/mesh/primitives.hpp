#pragma once

#include <array>
#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "fridu/mesh/mesh.hpp"

namespace fridu::mesh {

/// Class-I geodesic sphere: every icosahedron face is split into a
/// frequency x frequency triangular grid and projected onto the sphere.
/// Yields 10 f^2 + 2 vertices and 20 f^2 faces.
inline TriangleMesh geodesic_sphere(int frequency, double radius = 1.0, std::string id = "sphere") {
  if (frequency < 1) throw ValidationError("geodesic_sphere: frequency must be >= 1");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const std::array<Eigen::Vector3d, 12> ico = {{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                                                {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                                                {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}}};
  const std::array<std::array<int, 3>, 20> ico_faces = {{{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
                                                         {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                                         {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
                                                         {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}}};
  const int nu = frequency;
  // Lattice points are keyed by their integer barycentric coordinates over the
  // icosahedron vertices, so points shared between faces deduplicate exactly.
  std::map<std::vector<std::pair<int, int>>, int> index_of;
  std::vector<Eigen::Vector3d> pts;
  auto point = [&](const std::array<int, 3>& face, int i, int j) {
    const int k = nu - i - j;
    std::vector<std::pair<int, int>> key;
    for (auto [vert, w] : {std::pair{face[0], i}, std::pair{face[1], j}, std::pair{face[2], k}})
      if (w > 0) key.emplace_back(vert, w);
    std::sort(key.begin(), key.end());
    auto [it, inserted] = index_of.try_emplace(key, static_cast<int>(pts.size()));
    if (inserted) {
      Eigen::Vector3d p = Eigen::Vector3d::Zero();
      for (auto [vert, w] : key) p += ico[vert] * (static_cast<double>(w) / nu);
      pts.push_back(radius * p.normalized());
    }
    return it->second;
  };
  std::vector<std::array<int, 3>> tris;
  for (const auto& face : ico_faces) {
    // (i, j) = weights on face[0], face[1]; rows of constant i.
    for (int i = 0; i < nu; ++i)
      for (int j = 0; j < nu - i; ++j) {
        const int a = point(face, i + 1, j), b = point(face, i, j + 1), c = point(face, i, j);
        tris.push_back({c, a, b});
        if (j + 1 < nu - i) {
          const int d = point(face, i + 1, j + 1);
          tris.push_back({a, d, b});
        }
      }
  }
  Vertices v(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  Faces f(tris.size(), 3);
  for (size_t i = 0; i < tris.size(); ++i)
    for (int c = 0; c < 3; ++c) f(static_cast<Eigen::Index>(i), c) = tris[i][c];
  // Orient outward.
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const Eigen::Vector3d a = v.row(f(r, 0)), b = v.row(f(r, 1)), c = v.row(f(r, 2));
    if ((b - a).cross(c - a).dot(a + b + c) < 0) std::swap(f(r, 1), f(r, 2));
  }
  return make_mesh(std::move(id), std::move(v), std::move(f));
}

/// Icosphere after `subdivisions` rounds of 1-to-4 splitting (frequency 2^s).
inline TriangleMesh icosphere(int subdivisions, double radius = 1.0, std::string id = "icosphere") {
  return geodesic_sphere(1 << subdivisions, radius, std::move(id));
}

inline TriangleMesh regular_tetrahedron(double edge = 1.0, std::string id = "tetrahedron") {
  const double s = edge / (2.0 * std::sqrt(2.0));
  Vertices v(4, 3);
  v << s, s, s, s, -s, -s, -s, s, -s, -s, -s, s;
  Faces f(4, 3);
  f << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
  return make_mesh(std::move(id), std::move(v), std::move(f));
}

inline TriangleMesh unit_square(std::string id = "square") {
  Vertices v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  Faces f(2, 3);
  f << 0, 1, 2, 0, 2, 3;
  return make_mesh(std::move(id), std::move(v), std::move(f));
}

/// Regular (nx+1) x (ny+1) vertex grid over [0, sx] x [0, sy], split along
/// alternating diagonals.
inline TriangleMesh grid_patch(int nx, int ny, double sx = 1.0, double sy = 1.0, std::string id = "grid") {
  Vertices v((nx + 1) * (ny + 1), 3);
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) v.row(j * (nx + 1) + i) << sx * i / nx, sy * j / ny, 0.0;
  Faces f(2 * nx * ny, 3);
  int r = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
      if ((i + j) % 2 == 0) {
        f.row(r++) << a, b, d;
        f.row(r++) << a, d, c;
      } else {
        f.row(r++) << a, b, c;
        f.row(r++) << b, d, c;
      }
    }
  return make_mesh(std::move(id), std::move(v), std::move(f));
}

}  // namespace fridu::mesh
