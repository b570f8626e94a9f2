#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fridu/core/io.hpp"
#include "fridu/core/rng.hpp"
#include "fridu/mesh/mesh_io.hpp"
#include "fridu/mesh/primitives.hpp"
#include "fridu/pipeline/manifest.hpp"

namespace fridu::pipeline {

struct SyntheticConfig {
  std::uint64_t seed = 0;
  int n_shapes = 20;
  int n_vertices = 1000;
  double amplitude = 0.1;
  /// Shapes [0, n_train) form the training split; the rest are held out.
  int n_train = 16;
};

namespace detail {

/// Monomials x^a y^b z^c with 1 <= a+b+c <= 3 (spans spherical harmonics of degree 1..3).
inline std::vector<double> low_order_monomials(const Eigen::Vector3d& p) {
  std::vector<double> out;
  for (int deg = 1; deg <= 3; ++deg)
    for (int a = deg; a >= 0; --a)
      for (int b = deg - a; b >= 0; --b) {
        const int c = deg - a - b;
        out.push_back(std::pow(p.x(), a) * std::pow(p.y(), b) * std::pow(p.z(), c));
      }
  return out;
}

/// Asymmetric template: a triaxial ellipsoid with a few fixed bumps, so the
/// intrinsic geometry has no self-symmetries for descriptors to confuse.
inline double template_radius(const Eigen::Vector3d& u) {
  struct Bump {
    Eigen::Vector3d dir;
    double height, width;
  };
  static const Bump bumps[] = {{Eigen::Vector3d(0.8, 0.5, 0.3).normalized(), 0.35, 0.35},
                               {Eigen::Vector3d(-0.6, 0.2, 0.75).normalized(), 0.25, 0.3},
                               {Eigen::Vector3d(0.1, -0.9, -0.4).normalized(), 0.3, 0.4},
                               {Eigen::Vector3d(-0.5, -0.3, -0.8).normalized(), 0.15, 0.25}};
  double r = 1.0;
  for (const auto& b : bumps) r += b.height * std::exp(-(1.0 - u.dot(b.dir)) / (b.width * b.width));
  return r;
}

inline mesh::TriangleMesh normalized(mesh::TriangleMesh m) {
  const Eigen::RowVector3d centre = m.vertices.colwise().mean();
  m.vertices.rowwise() -= centre;
  m.vertices *= 1.0 / std::sqrt(mesh::surface_area(m));
  return m;
}

}  // namespace detail

/// Unit-area template of about `n_vertices` vertices (geodesic sphere of the
/// nearest frequency, reshaped).
inline mesh::TriangleMesh synthetic_template(int n_vertices) {
  const int freq = std::max(1, static_cast<int>(std::lround(std::sqrt(std::max(0, n_vertices - 2) / 10.0))));
  mesh::TriangleMesh m = mesh::geodesic_sphere(freq, 1.0, "template");
  const Eigen::Vector3d axes(1.0, 0.75, 0.55);
  for (int i = 0; i < m.num_vertices(); ++i) {
    const Eigen::Vector3d u = m.vertices.row(i).transpose();
    m.vertices.row(i) = (detail::template_radius(u) * u.cwiseProduct(axes)).transpose();
  }
  return detail::normalized(std::move(m));
}

/// Smooth deformation of the template: radial scaling by
/// 1 + amplitude * sum_j c_j m_j(u), c_j ~ N(0, 1/19) over the degree 1..3
/// monomials of the template direction u. Vertex order is preserved.
inline mesh::TriangleMesh synthetic_shape(const mesh::TriangleMesh& tmpl, const mesh::TriangleMesh& sphere,
                                          double amplitude, Rng& rng, std::string id) {
  std::vector<double> coef(19);
  for (auto& c : coef) c = rng.normal() / std::sqrt(19.0);
  mesh::TriangleMesh m = tmpl;
  m.id = std::move(id);
  for (int i = 0; i < m.num_vertices(); ++i) {
    const auto mono = detail::low_order_monomials(sphere.vertices.row(i).transpose());
    double field = 0.0;
    for (size_t j = 0; j < mono.size(); ++j) field += coef[j] * mono[j];
    m.vertices.row(i) *= 1.0 + amplitude * field;
  }
  return detail::normalized(std::move(m));
}

/// Writes meshes/, a shared identity correspondence and manifest.json under
/// `out_dir`. Train pairs: all ordered pairs of training shapes. Test pairs:
/// unordered pairs (i < j) of held-out shapes.
inline DatasetManifest make_synthetic_dataset(const fs::path& out_dir, const SyntheticConfig& cfg) {
  if (cfg.n_shapes < 2 || cfg.n_train < 0 || cfg.n_train > cfg.n_shapes)
    throw ConfigError("make_synthetic_dataset: need n_shapes >= 2 and 0 <= n_train <= n_shapes");
  if (cfg.amplitude < 0 || !std::isfinite(cfg.amplitude)) throw ConfigError("make_synthetic_dataset: bad amplitude");
  fs::create_directories(out_dir / "meshes");
  const mesh::TriangleMesh tmpl = synthetic_template(cfg.n_vertices);
  const int freq = std::max(1, static_cast<int>(std::lround(std::sqrt(std::max(0, cfg.n_vertices - 2) / 10.0))));
  const mesh::TriangleMesh sphere = mesh::geodesic_sphere(freq);

  DatasetManifest man;
  man.name = "synthetic";
  std::vector<std::string> ids;
  for (int s = 0; s < cfg.n_shapes; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "shape_%03d", s);
    ids.emplace_back(buf);
    Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(s));
    const mesh::TriangleMesh m = synthetic_shape(tmpl, sphere, cfg.amplitude, rng, ids.back());
    const fs::path path = out_dir / "meshes" / (ids.back() + ".off");
    write_file_atomic(path, mesh::to_off(m));
    man.meshes[ids.back()] = fs::absolute(path);
  }
  std::string identity;
  for (int i = 0; i < tmpl.num_vertices(); ++i) identity += std::to_string(i) + "\n";
  const fs::path gt = fs::absolute(out_dir / "identity.txt");
  write_file_atomic(gt, identity);

  auto add = [&](int a, int b, Split split) {
    man.pairs.push_back({ids[a] + "__" + ids[b], ids[a], ids[b], gt, std::nullopt, std::nullopt, split});
  };
  for (int a = 0; a < cfg.n_train; ++a)
    for (int b = 0; b < cfg.n_train; ++b)
      if (a != b) add(a, b, Split::train);
  for (int a = cfg.n_train; a < cfg.n_shapes; ++a)
    for (int b = a + 1; b < cfg.n_shapes; ++b) add(a, b, Split::test);
  save_manifest(out_dir / "manifest.json", man);
  return man;
}

/// Mean over edges of |l_b / l_a - 1| between two meshes sharing connectivity.
inline double mean_edge_distortion(const mesh::TriangleMesh& a, const mesh::TriangleMesh& b) {
  const auto es = mesh::edges(a);
  double acc = 0.0;
  for (auto [i, j] : es) {
    const double la = (a.vertices.row(i) - a.vertices.row(j)).norm();
    const double lb = (b.vertices.row(i) - b.vertices.row(j)).norm();
    acc += std::abs(lb / la - 1.0);
  }
  return es.empty() ? 0.0 : acc / static_cast<double>(es.size());
}

}  // namespace fridu::pipeline
