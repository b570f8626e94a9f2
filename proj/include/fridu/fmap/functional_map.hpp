#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/core/io.hpp"
#include "fridu/core/log.hpp"
#include "fridu/descriptors/descriptors.hpp"
#include "fridu/mesh/spectral.hpp"

namespace fridu::fmap {

/// C21: maps coefficient vectors in the basis of M1 (source) to coefficient
/// vectors in the basis of M2 (target). k2 x k1.
struct FunctionalMap {
  std::string source_id;
  std::string target_id;
  Eigen::MatrixXd C;

  int k1() const { return static_cast<int>(C.cols()); }
  int k2() const { return static_cast<int>(C.rows()); }
};

/// T21 as an index array: assignment[i] is the vertex of M1 that vertex i of
/// M2 maps to.
struct PointwiseMap {
  std::string source_id;
  std::string target_id;
  std::vector<int> assignment;

  int size() const { return static_cast<int>(assignment.size()); }
};

inline void validate(const PointwiseMap& p, int n1) {
  for (size_t i = 0; i < p.assignment.size(); ++i)
    if (p.assignment[i] < 0 || p.assignment[i] >= n1)
      throw IndexError("assignment[" + std::to_string(i) + "] = " + std::to_string(p.assignment[i]) +
                       " outside [0, " + std::to_string(n1) + ")");
}

/// Soft check: a map built from a correspondence sends constants to constants,
/// so |C(0,0)| dominates row 0. Returns false (and warns) otherwise.
inline bool check_constant_row(const FunctionalMap& f) {
  if (f.C.rows() == 0 || f.C.cols() < 2) return true;
  const double lead = std::abs(f.C(0, 0));
  const double rest = f.C.row(0).tail(f.C.cols() - 1).cwiseAbs().maxCoeff();
  if (lead >= rest) return true;
  log::warn("functional map " + f.source_id + "->" + f.target_id + ": C(0,0) is not the dominant entry of row 0");
  return false;
}

/// Ground-truth style map C = phi2^T A2 Pi phi1.
inline FunctionalMap fmap_from_p2p(const PointwiseMap& pi, const mesh::SpectralBasis& basis1,
                                   const mesh::SpectralBasis& basis2) {
  if (pi.size() != basis2.num_vertices())
    throw DimensionError("fmap_from_p2p: assignment length " + std::to_string(pi.size()) + " but target mesh has " +
                         std::to_string(basis2.num_vertices()) + " vertices");
  validate(pi, basis1.num_vertices());
  Eigen::MatrixXd pulled(pi.size(), basis1.k());
  for (int i = 0; i < pi.size(); ++i) pulled.row(i) = basis1.phi.row(pi.assignment[i]);
  FunctionalMap f{pi.source_id, pi.target_id, basis2.pinv() * pulled};
  return f;
}

/// Same formula for a dense (possibly soft) n2 x n1 correspondence matrix.
inline Eigen::MatrixXd fmap_from_matrix(const Eigen::MatrixXd& P, const mesh::SpectralBasis& basis1,
                                        const mesh::SpectralBasis& basis2) {
  if (P.rows() != basis2.num_vertices() || P.cols() != basis1.num_vertices())
    throw DimensionError("fmap_from_matrix: correspondence matrix has wrong shape");
  return basis2.pinv() * (P * basis1.phi);
}

/// For every row of `query`, index of the nearest row of `ref` in Euclidean
/// distance; ties go to the smallest index. Candidates are screened with a
/// GEMM-based distance expansion and near-ties are re-resolved by direct
/// differences, so the result equals an exhaustive direct search.
inline std::vector<int> nearest_rows(const Eigen::MatrixXd& query, const Eigen::MatrixXd& ref) {
  if (query.cols() != ref.cols()) throw DimensionError("nearest_rows: dimension mismatch");
  const Eigen::Index nq = query.rows(), nr = ref.rows();
  if (nr == 0) throw DimensionError("nearest_rows: empty reference set");
  std::vector<int> out(static_cast<size_t>(nq));
  const Eigen::VectorXd ref_sq = ref.rowwise().squaredNorm();
  const double ref_sq_max = ref_sq.maxCoeff();
  constexpr Eigen::Index kBlock = 512;
  Eigen::MatrixXd cross;
  std::vector<Eigen::Index> near;
  for (Eigen::Index q0 = 0; q0 < nq; q0 += kBlock) {
    const Eigen::Index nb = std::min(kBlock, nq - q0);
    cross.noalias() = ref * query.middleRows(q0, nb).transpose();  // nr x nb
    for (Eigen::Index b = 0; b < nb; ++b) {
      const double* col = cross.col(b).data();
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < nr; ++j) best = std::min(best, ref_sq[j] - 2.0 * col[j]);
      const double q_sq = query.row(q0 + b).squaredNorm();
      const double slack = 1e-9 * (q_sq + ref_sq_max) + 1e-300;
      near.clear();
      for (Eigen::Index j = 0; j < nr; ++j)
        if (ref_sq[j] - 2.0 * col[j] <= best + slack) near.push_back(j);
      Eigen::Index arg = near.front();
      if (near.size() > 1) {
        double best_exact = std::numeric_limits<double>::infinity();
        for (Eigen::Index j : near) {
          const double d = (query.row(q0 + b) - ref.row(j)).squaredNorm();
          if (d < best_exact) {
            best_exact = d;
            arg = j;
          }
        }
      }
      out[static_cast<size_t>(q0 + b)] = static_cast<int>(arg);
    }
  }
  return out;
}

/// Pointwise map by nearest neighbours between rows of phi2 C and rows of phi1,
/// using the leading k_use x k_use block of C.
inline PointwiseMap p2p_from_fmap(const FunctionalMap& f, const mesh::SpectralBasis& basis1,
                                  const mesh::SpectralBasis& basis2, std::optional<int> k_use = std::nullopt) {
  const int limit = std::min({f.k1(), f.k2(), basis1.k(), basis2.k()});
  const int k = k_use.value_or(std::min(f.k1(), f.k2()));
  if (k < 1 || k > limit)
    throw DimensionError("p2p_from_fmap: k_use=" + std::to_string(k) + " outside [1, " + std::to_string(limit) + "]");
  const Eigen::MatrixXd emb = basis2.phi.leftCols(k) * f.C.topLeftCorner(k, k);
  return {f.source_id, f.target_id, nearest_rows(emb, basis1.phi.leftCols(k))};
}

/// Least-squares map from descriptors:
///   min_C ||C A - B||_F^2 + lambda_lap ||C L1 - L2 C||_F^2,
/// A = phi1^+ D1, B = phi2^+ D2, with landmark columns scaled by landmark_weight.
/// The Laplacian term is diagonal per entry, so each row of C solves its own
/// k1 x k1 normal equation.
inline FunctionalMap fmap_from_descriptors(const desc::DescriptorSet& d1, const desc::DescriptorSet& d2,
                                           const mesh::SpectralBasis& basis1, const mesh::SpectralBasis& basis2,
                                           double lambda_lap = 0.0, double landmark_weight = 1.0) {
  if (d1.d() != d2.d() || d1.landmark_columns != d2.landmark_columns)
    throw DimensionError("fmap_from_descriptors: descriptor sets have different columns");
  if (d1.num_vertices() != basis1.num_vertices() || d2.num_vertices() != basis2.num_vertices())
    throw DimensionError("fmap_from_descriptors: descriptor rows do not match the bases");
  if (d1.d() < std::max(basis1.k(), basis2.k()))
    log::warn("fmap_from_descriptors: " + std::to_string(d1.d()) + " descriptors for a " +
              std::to_string(basis2.k()) + "x" + std::to_string(basis1.k()) + " map; the system is underdetermined");
  Eigen::MatrixXd D1 = d1.values, D2 = d2.values;
  if (const int nl = d1.landmark_columns; nl > 0) {
    D1.rightCols(nl) *= landmark_weight;
    D2.rightCols(nl) *= landmark_weight;
  }
  const Eigen::MatrixXd A = basis1.pinv() * D1;  // k1 x d
  const Eigen::MatrixXd B = basis2.pinv() * D2;  // k2 x d
  const Eigen::MatrixXd G = A * A.transpose();
  const Eigen::MatrixXd rhs = A * B.transpose();  // k1 x k2
  const int k1 = basis1.k(), k2 = basis2.k();
  Eigen::MatrixXd C(k2, k1);
  for (int i = 0; i < k2; ++i) {
    Eigen::MatrixXd M = G;
    if (lambda_lap != 0.0)
      for (int j = 0; j < k1; ++j) {
        const double diff = basis1.lambda[j] - basis2.lambda[i];
        M(j, j) += lambda_lap * diff * diff;
      }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13) || !ldlt.isPositive())
      throw SingularSystemError("descriptor normal equations are rank deficient (row " + std::to_string(i) +
                                "); add descriptors or a Laplacian penalty");
    C.row(i) = ldlt.solve(rhs.col(i)).transpose();
  }
  FunctionalMap f{basis1.mesh_id, basis2.mesh_id, C};
  return f;
}

/// ZoomOut: alternate nearest-neighbour extraction at the current size and
/// re-projection at the next size until k_end is reached.
inline FunctionalMap zoomout(const FunctionalMap& init, const mesh::SpectralBasis& basis1,
                             const mesh::SpectralBasis& basis2, int k_start, int k_end, int step = 1) {
  const int limit = std::min(basis1.k(), basis2.k());
  if (k_start < 1 || k_start > k_end || k_end > limit)
    throw DimensionError("zoomout: need 1 <= k_start <= k_end <= " + std::to_string(limit));
  if (init.k1() < k_start || init.k2() < k_start) throw DimensionError("zoomout: initial map smaller than k_start");
  if (step < 1) throw DimensionError("zoomout: step must be >= 1");
  FunctionalMap cur{init.source_id, init.target_id, init.C.topLeftCorner(k_start, k_start)};
  int k = k_start;
  do {
    const PointwiseMap pi = p2p_from_fmap(cur, basis1, basis2, k);
    k = std::min(k + step, k_end);
    cur = fmap_from_p2p(pi, basis1.truncated(k), basis2.truncated(k));
  } while (cur.k1() < k_end);
  return cur;
}

/// Reads a correspondence file: line i holds the 0-based image of vertex i of M2.
inline PointwiseMap load_assignment(const fs::path& path, std::string source_id = {}, std::string target_id = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open correspondence file " + path.string());
  PointwiseMap p{std::move(source_id), std::move(target_id), {}};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    long v;
    if (!(ss >> v)) {
      std::string rest;
      if (std::istringstream(line) >> rest) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not an integer");
      continue;
    }
    p.assignment.push_back(static_cast<int>(v));
  }
  return p;
}

inline std::string assignment_text(const PointwiseMap& p) {
  std::string out;
  for (int v : p.assignment) out += std::to_string(v) + "\n";
  return out;
}

}  // namespace fridu::fmap
