#pragma once

#include <Eigen/Core>

#include "fridu/fmap/functional_map.hpp"
#include "fridu/mesh/spectral.hpp"

namespace fridu::guidance {

struct LossGrad {
  double value = 0.0;
  Eigen::MatrixXd grad;
};

/// ||phi2 C - Pi phi1||^2 in the mass norm of M2, with Pi = p2p_from_fmap(C)
/// on the leading k_use block held fixed (no gradient through the projection).
/// Gradient: 2 phi2^T A2 (phi2 C - Pi phi1).
inline LossGrad loss_p2p(const Eigen::MatrixXd& C, const mesh::SpectralBasis& basis1,
                         const mesh::SpectralBasis& basis2, int k_use, std::vector<int>* pi_out = nullptr) {
  const int k = static_cast<int>(C.rows());
  if (C.cols() != k) throw DimensionError("loss_p2p: map must be square");
  if (basis1.k() < k || basis2.k() < k)
    throw DimensionError("loss_p2p: bases have fewer than " + std::to_string(k) + " functions");
  if (k_use < 1 || k_use > k) throw DimensionError("loss_p2p: k_use outside [1, " + std::to_string(k) + "]");
  const auto phi1 = basis1.phi.leftCols(k);
  const auto phi2 = basis2.phi.leftCols(k);
  const Eigen::MatrixXd emb = phi2 * C;
  const std::vector<int> pi = fmap::nearest_rows(emb.leftCols(k_use), phi1.leftCols(k_use));
  Eigen::MatrixXd r = emb;
  for (int v = 0; v < static_cast<int>(pi.size()); ++v) r.row(v) -= phi1.row(pi[v]);
  LossGrad out;
  out.value = mesh::mass_norm_sq(r, basis2.mass);
  out.grad = 2.0 * phi2.transpose() * (basis2.mass.asDiagonal() * r);
  if (pi_out) *pi_out = pi;
  return out;
}

/// ||C^T C - I||_F^2; gradient 4 C (C^T C - I).
inline LossGrad loss_orth(const Eigen::MatrixXd& C) {
  const Eigen::MatrixXd E = C.transpose() * C - Eigen::MatrixXd::Identity(C.cols(), C.cols());
  return {E.squaredNorm(), 4.0 * C * E};
}

/// ||C L1 - L2 C||_F^2 = sum_ij (l1_j - l2_i)^2 C_ij^2; gradient 2 (l1_j - l2_i)^2 C_ij.
inline LossGrad loss_lap(const Eigen::MatrixXd& C, const Eigen::VectorXd& lambda1, const Eigen::VectorXd& lambda2) {
  if (lambda1.size() != C.cols() || lambda2.size() != C.rows())
    throw DimensionError("loss_lap: eigenvalue counts do not match the map");
  Eigen::MatrixXd w(C.rows(), C.cols());
  for (Eigen::Index i = 0; i < C.rows(); ++i)
    for (Eigen::Index j = 0; j < C.cols(); ++j) w(i, j) = std::pow(lambda1[j] - lambda2[i], 2);
  LossGrad out;
  out.value = (w.array() * C.array().square()).sum();
  out.grad = 2.0 * (w.array() * C.array()).matrix();
  return out;
}

}  // namespace fridu::guidance
