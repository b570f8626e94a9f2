#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <string>

#include "fridu/core/error.hpp"
#include "fridu/core/rng.hpp"
#include "fridu/mesh/laplacian.hpp"
#include "fridu/mesh/mesh.hpp"

namespace fridu::mesh {

/// Leading Laplace-Beltrami eigenpairs of one mesh.
///
/// `phi` is n x k with mass-orthonormal columns (phi^T diag(mass) phi = I),
/// `lambda` is ascending with lambda[0] ~ 0, and each column is signed so that
/// its entry of largest magnitude is positive.
struct SpectralBasis {
  std::string mesh_id;
  Eigen::MatrixXd phi;
  Eigen::VectorXd lambda;
  Eigen::VectorXd mass;

  int k() const { return static_cast<int>(phi.cols()); }
  int num_vertices() const { return static_cast<int>(phi.rows()); }

  /// Mass-weighted pseudo-inverse phi^T A (k x n).
  Eigen::MatrixXd pinv() const { return phi.transpose() * mass.asDiagonal(); }

  /// Basis restricted to its first `k_use` eigenpairs.
  SpectralBasis truncated(int k_use) const {
    if (k_use < 1 || k_use > k()) throw DimensionError("truncated: k_use out of range");
    return {mesh_id, phi.leftCols(k_use), lambda.head(k_use), mass};
  }
};

struct EigenOptions {
  /// Meshes up to this size use a dense solver on the symmetrized matrix.
  int dense_threshold = 1200;
  int max_iterations = 1000;
  double tolerance = 1e-10;
  std::uint64_t seed = 7;
};

namespace detail {

inline void apply_sign_convention(Eigen::MatrixXd& phi) {
  for (Eigen::Index c = 0; c < phi.cols(); ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < phi.rows(); ++r)
      if (std::abs(phi(r, c)) > best) {
        best = std::abs(phi(r, c));
        arg = r;
      }
    if (phi(arg, c) < 0) phi.col(c) *= -1.0;
  }
}

inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& Y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(Y.rows(), Y.cols());
}

// Smallest k eigenpairs of the sparse PSD matrix S by block shift-invert
// subspace iteration with Rayleigh-Ritz. The block is wider than k so that
// clustered eigenvalues converge together.
inline void sparse_smallest(const SparseMatrix& S, int k, const EigenOptions& opt, Eigen::MatrixXd& vecs,
                            Eigen::VectorXd& vals) {
  const Eigen::Index n = S.rows();
  const int p = static_cast<int>(std::min<Eigen::Index>(n - 1, std::max(2 * k, k + 16)));
  double scale = 0.0;
  for (int c = 0; c < S.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(S, c); it; ++it) scale = std::max(scale, std::abs(it.value()));
  SparseMatrix shifted = S;
  for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += 1e-8 * scale;
  Eigen::SimplicialLDLT<SparseMatrix> solver(shifted);
  if (solver.info() != Eigen::Success) throw SolverError("factorization of shifted Laplacian failed");

  Rng rng(opt.seed);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index c = 0; c < p; ++c)
    for (Eigen::Index r = 0; r < n; ++r) X(r, c) = rng.normal();
  X = orthonormalize(X);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Eigen::MatrixXd Q = orthonormalize(solver.solve(X));
    const Eigen::MatrixXd SQ = S * Q;
    Eigen::MatrixXd H = Q.transpose() * SQ;
    H = 0.5 * (H + H.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    X = Q * es.eigenvectors();
    const Eigen::MatrixXd R = SQ * es.eigenvectors().leftCols(k) - X.leftCols(k) * es.eigenvalues().head(k).asDiagonal();
    const double worst = R.colwise().norm().maxCoeff();
    if (worst <= opt.tolerance * scale) {
      vecs = X.leftCols(k);
      vals = es.eigenvalues().head(k);
      return;
    }
  }
  throw SolverError("subspace iteration did not converge in " + std::to_string(opt.max_iterations) + " iterations");
}

}  // namespace detail

/// Solves W phi = A phi Lambda for the k smallest eigenpairs, A = diag(mass).
inline SpectralBasis eigendecompose(const SparseMatrix& W, const Eigen::VectorXd& mass, int k,
                                    const EigenOptions& opt = {}, std::string mesh_id = {}) {
  const Eigen::Index n = W.rows();
  if (W.cols() != n || mass.size() != n) throw DimensionError("eigendecompose: W and mass sizes disagree");
  if (k < 1 || k >= n)
    throw DimensionError("eigendecompose: need 1 <= k < n, got k=" + std::to_string(k) + ", n=" + std::to_string(n));
  if ((mass.array() <= 0).any()) throw DimensionError("eigendecompose: mass must be positive");

  const Eigen::VectorXd inv_sqrt = mass.cwiseSqrt().cwiseInverse();
  const SparseMatrix S = inv_sqrt.asDiagonal() * W * inv_sqrt.asDiagonal();
  Eigen::MatrixXd vecs;
  Eigen::VectorXd vals;
  if (n <= opt.dense_threshold) {
    Eigen::MatrixXd dense = Eigen::MatrixXd(S);
    dense = 0.5 * (dense + dense.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    if (es.info() != Eigen::Success) throw SolverError("dense eigensolver failed");
    vecs = es.eigenvectors().leftCols(k);
    vals = es.eigenvalues().head(k);
  } else {
    detail::sparse_smallest(S, k, opt, vecs, vals);
  }
  SpectralBasis basis;
  basis.mesh_id = std::move(mesh_id);
  basis.phi = inv_sqrt.asDiagonal() * vecs;
  basis.lambda = vals.cwiseMax(0.0);
  basis.mass = mass;
  // The kernel of W on a connected mesh is exactly the constants.
  if (basis.lambda[0] <= 1e-10 * std::max(1.0, basis.lambda[k - 1]))
    basis.phi.col(0).setConstant(1.0 / std::sqrt(mass.sum()));
  detail::apply_sign_convention(basis.phi);
  return basis;
}

inline SpectralBasis compute_basis(const TriangleMesh& m, int k, const EigenOptions& opt = {}) {
  return eigendecompose(cotangent_laplacian(m), lumped_mass(m), k, opt, m.id);
}

}  // namespace fridu::mesh
