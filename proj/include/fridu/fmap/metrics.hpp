#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/fmap/functional_map.hpp"
#include "fridu/mesh/geodesics.hpp"
#include "fridu/mesh/mesh.hpp"

namespace fridu::fmap {

struct ErrorReport {
  Eigen::VectorXd per_vertex;
  double mean = 0.0;
};

namespace detail {

inline void check_pair(const PointwiseMap& pi, const PointwiseMap& gt, const mesh::TriangleMesh& m1) {
  if (pi.size() != gt.size())
    throw DimensionError("error metric: assignment lengths differ (" + std::to_string(pi.size()) + " vs " +
                         std::to_string(gt.size()) + ")");
  validate(pi, m1.num_vertices());
  validate(gt, m1.num_vertices());
}

inline ErrorReport finish(Eigen::VectorXd e) {
  ErrorReport r;
  r.mean = e.size() ? e.mean() : 0.0;
  r.per_vertex = std::move(e);
  return r;
}

}  // namespace detail

/// e_i = ||x_{pi(i)} - x_{gt(i)}|| / sqrt(area of M1).
inline ErrorReport normalized_euclidean_error(const PointwiseMap& pi, const PointwiseMap& gt,
                                              const mesh::TriangleMesh& m1) {
  detail::check_pair(pi, gt, m1);
  const double norm = std::sqrt(mesh::surface_area(m1));
  Eigen::VectorXd e(pi.size());
  for (int i = 0; i < pi.size(); ++i)
    e[i] = (m1.vertices.row(pi.assignment[i]) - m1.vertices.row(gt.assignment[i])).norm() / norm;
  return detail::finish(std::move(e));
}

/// e_i = d_graph(pi(i), gt(i)) / sqrt(area of M1). Distances come from
/// Dijkstra rows rooted at the ground-truth targets.
inline ErrorReport geodesic_error(const PointwiseMap& pi, const PointwiseMap& gt, const mesh::TriangleMesh& m1,
                                  mesh::GeodesicCache& cache) {
  detail::check_pair(pi, gt, m1);
  const double norm = std::sqrt(mesh::surface_area(m1));
  Eigen::VectorXd e(pi.size());
  for (int i = 0; i < pi.size(); ++i) e[i] = cache.from(gt.assignment[i])[pi.assignment[i]] / norm;
  return detail::finish(std::move(e));
}

/// Mean geodesic error in the customary x100 reporting unit.
inline double mean_geodesic_error_x100(const PointwiseMap& pi, const PointwiseMap& gt, const mesh::TriangleMesh& m1,
                                       mesh::GeodesicCache& cache) {
  return 100.0 * geodesic_error(pi, gt, m1, cache).mean;
}

/// Fraction of errors <= each threshold.
inline std::vector<double> error_curve(const Eigen::VectorXd& errors, const std::vector<double>& thresholds) {
  std::vector<double> sorted(errors.data(), errors.data() + errors.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    if (sorted.empty()) {
      out.push_back(1.0);
      continue;
    }
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    out.push_back(static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size()));
  }
  return out;
}

/// `count` evenly spaced thresholds on [0, max_threshold].
inline std::vector<double> linear_thresholds(double max_threshold, int count) {
  std::vector<double> t;
  for (int i = 0; i < count; ++i) t.push_back(count == 1 ? max_threshold : max_threshold * i / (count - 1));
  return t;
}

}  // namespace fridu::fmap
