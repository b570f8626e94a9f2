#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fridu/core/error.hpp"

namespace fridu::mesh {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Triangle mesh with 0-based face indices. Construct through make_mesh() or
/// load_mesh() so the invariants below hold:
///   - every face index is in [0, n)
///   - faces have three distinct vertices and strictly positive area
///   - the mesh is a single edge-connected component
struct TriangleMesh {
  std::string id;
  Vertices vertices;
  Faces faces;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
};

inline double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

inline double face_area(const TriangleMesh& m, int f) {
  return triangle_area(m.vertices.row(m.faces(f, 0)).transpose(), m.vertices.row(m.faces(f, 1)).transpose(),
                       m.vertices.row(m.faces(f, 2)).transpose());
}

inline double surface_area(const TriangleMesh& m) {
  double s = 0.0;
  for (int f = 0; f < m.num_faces(); ++f) s += face_area(m, f);
  return s;
}

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace detail

/// Number of edge-connected components, counting unreferenced vertices as
/// singleton components.
inline int count_components(int n, const Faces& faces) {
  detail::UnionFind uf(n);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    uf.unite(faces(f, 0), faces(f, 1));
    uf.unite(faces(f, 1), faces(f, 2));
  }
  int count = 0;
  for (int i = 0; i < n; ++i) count += uf.find(i) == i;
  return count;
}

inline void validate(const TriangleMesh& m) {
  const int n = m.num_vertices();
  if (n == 0 || m.num_faces() == 0) throw ValidationError("mesh '" + m.id + "' is empty");
  if (!m.vertices.allFinite()) throw ValidationError("mesh '" + m.id + "' has non-finite coordinates");
  for (int f = 0; f < m.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int v = m.faces(f, c);
      if (v < 0 || v >= n)
        throw ValidationError("face " + std::to_string(f) + " references vertex " + std::to_string(v) +
                              " but the mesh has " + std::to_string(n) + " vertices");
    }
    if (m.faces(f, 0) == m.faces(f, 1) || m.faces(f, 1) == m.faces(f, 2) || m.faces(f, 0) == m.faces(f, 2))
      throw ValidationError("face " + std::to_string(f) + " repeats a vertex");
  }
  const double diag = (m.vertices.colwise().maxCoeff() - m.vertices.colwise().minCoeff()).norm();
  const double min_area = 1e-14 * diag * diag;
  for (int f = 0; f < m.num_faces(); ++f)
    if (!(face_area(m, f) > min_area)) throw ValidationError("face " + std::to_string(f) + " has zero area");
  if (const int c = count_components(n, m.faces); c != 1)
    throw ValidationError("mesh '" + m.id + "' has " + std::to_string(c) + " connected components");
}

inline TriangleMesh make_mesh(std::string id, Vertices vertices, Faces faces) {
  TriangleMesh m{std::move(id), std::move(vertices), std::move(faces)};
  validate(m);
  return m;
}

/// Unique undirected edges as (min, max) pairs, sorted.
inline std::vector<std::pair<int, int>> edges(const TriangleMesh& m) {
  std::vector<std::pair<int, int>> e;
  e.reserve(static_cast<size_t>(m.num_faces()) * 3);
  for (int f = 0; f < m.num_faces(); ++f)
    for (int c = 0; c < 3; ++c) {
      const int a = m.faces(f, c), b = m.faces(f, (c + 1) % 3);
      e.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  return e;
}

}  // namespace fridu::mesh
