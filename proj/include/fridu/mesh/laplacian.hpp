#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>

#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/mesh/mesh.hpp"

namespace fridu::mesh {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Cotangent stiffness matrix W (positive semi-definite convention):
/// W_ij = -(cot a_ij + cot b_ij) / 2 over the triangles sharing edge ij, and
/// W_ii = -sum_j W_ij so every row sums to zero. Obtuse triangles give
/// negative cotangents; they are kept as is.
inline SparseMatrix cotangent_laplacian(const TriangleMesh& m) {
  const int n = m.num_vertices();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(m.num_faces()) * 12);
  std::vector<double> diag(n, 0.0);
  for (int f = 0; f < m.num_faces(); ++f) {
    for (int c = 0; c < 3; ++c) {
      // Angle at corner c is opposite edge (c+1, c+2).
      const int i = m.faces(f, (c + 1) % 3), j = m.faces(f, (c + 2) % 3), o = m.faces(f, c);
      const Eigen::Vector3d u = m.vertices.row(i) - m.vertices.row(o);
      const Eigen::Vector3d v = m.vertices.row(j) - m.vertices.row(o);
      const double cot = u.dot(v) / u.cross(v).norm();
      const double w = -0.5 * cot;
      trip.emplace_back(i, j, w);
      trip.emplace_back(j, i, w);
      diag[i] -= w;
      diag[j] -= w;
    }
  }
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, diag[i]);
  SparseMatrix W(n, n);
  W.setFromTriplets(trip.begin(), trip.end());
  return W;
}

/// Barycentric lumped mass: one third of the area of each incident face.
inline Eigen::VectorXd lumped_mass(const TriangleMesh& m) {
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(m.num_vertices());
  for (int f = 0; f < m.num_faces(); ++f) {
    const double a = face_area(m, f) / 3.0;
    for (int c = 0; c < 3; ++c) mass[m.faces(f, c)] += a;
  }
  return mass;
}

/// sum_i mass[i] * ||F_i||^2
inline double mass_norm_sq(const Eigen::Ref<const Eigen::MatrixXd>& F, const Eigen::VectorXd& mass) {
  if (F.rows() != mass.size())
    throw DimensionError("mass_norm_sq: " + std::to_string(F.rows()) + " rows vs " + std::to_string(mass.size()) +
                         " mass entries");
  double total = 0.0;
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < F.cols(); ++j) row += F(i, j) * F(i, j);
    total += mass[i] * row;
  }
  return total;
}

}  // namespace fridu::mesh
