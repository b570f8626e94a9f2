#pragma once

#include <Eigen/Core>

#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <unordered_map>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/mesh/mesh.hpp"

namespace fridu::mesh {

/// Edge graph of a mesh weighted by Euclidean edge length.
class EdgeGraph {
 public:
  explicit EdgeGraph(const TriangleMesh& m) : adj_(m.num_vertices()) {
    for (auto [a, b] : edges(m)) {
      const double len = (m.vertices.row(a) - m.vertices.row(b)).norm();
      adj_[a].push_back({b, len});
      adj_[b].push_back({a, len});
    }
  }

  int size() const { return static_cast<int>(adj_.size()); }

  /// Single-source shortest paths (Dijkstra).
  Eigen::VectorXd distances_from(int source) const {
    const int n = size();
    if (source < 0 || source >= n) throw IndexError("geodesic source " + std::to_string(source) + " out of range");
    Eigen::VectorXd dist = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[source] = 0.0;
    heap.push({0.0, source});
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[u]) continue;
      for (const auto& e : adj_[u]) {
        const double nd = d + e.length;
        if (nd < dist[e.to]) {
          dist[e.to] = nd;
          heap.push({nd, e.to});
        }
      }
    }
    return dist;
  }

 private:
  struct Edge {
    int to;
    double length;
  };
  std::vector<std::vector<Edge>> adj_;
};

/// |sources| x n matrix of graph-geodesic distances.
inline Eigen::MatrixXd graph_geodesics(const TriangleMesh& m, std::span<const int> sources) {
  const EdgeGraph g(m);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(sources.size()), m.num_vertices());
  for (size_t s = 0; s < sources.size(); ++s) out.row(static_cast<Eigen::Index>(s)) = g.distances_from(sources[s]).transpose();
  return out;
}

/// Lazily filled rows of the geodesic distance matrix of one mesh.
class GeodesicCache {
 public:
  explicit GeodesicCache(const TriangleMesh& m) : graph_(m) {}

  const Eigen::VectorXd& from(int source) {
    auto it = rows_.find(source);
    if (it == rows_.end()) it = rows_.emplace(source, graph_.distances_from(source)).first;
    return it->second;
  }

  double distance(int a, int b) { return from(a)[b]; }
  size_t cached_sources() const { return rows_.size(); }

 private:
  EdgeGraph graph_;
  std::unordered_map<int, Eigen::VectorXd> rows_;
};

}  // namespace fridu::mesh
