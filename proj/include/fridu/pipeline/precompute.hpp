#pragma once

#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fridu/core/log.hpp"
#include "fridu/descriptors/descriptors.hpp"
#include "fridu/fmap/functional_map.hpp"
#include "fridu/mesh/mesh_io.hpp"
#include "fridu/pipeline/cache.hpp"
#include "fridu/pipeline/config.hpp"
#include "fridu/pipeline/manifest.hpp"

namespace fridu::pipeline {

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0: hardware).
/// Exceptions are caught per item; the returned strings are "" on success.
inline std::vector<std::string> parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  std::vector<std::string> errors(static_cast<size_t>(n));
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::max(1, std::min(workers, n));
  std::atomic<int> next{0};
  auto run = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[static_cast<size_t>(i)] = e.what();
        if (errors[static_cast<size_t>(i)].empty()) errors[static_cast<size_t>(i)] = "unknown error";
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  return errors;
}

/// All per-mesh and per-pair artifacts a command needs, loaded from or
/// written to the cache.
struct Workspace {
  std::map<std::string, mesh::TriangleMesh> meshes;
  std::map<std::string, mesh::SpectralBasis> bases;
  std::map<std::string, std::string> basis_keys, desc_keys;
  std::map<std::string, desc::DescriptorSet> descriptors;
  std::map<std::string, fmap::FunctionalMap> gt, init;
  std::map<std::string, fmap::PointwiseMap> gt_p2p;
  std::map<std::string, std::string> failures;  // item id -> message
  long hits = 0, misses = 0;

  const mesh::SpectralBasis& basis(const std::string& id) const { return bases.at(id); }
};

namespace detail {

inline std::string basis_key(const std::string& mesh_bytes, const RunConfig& cfg, const mesh::EigenOptions& eo) {
  return content_key({"basis-v1", mesh_bytes, std::to_string(cfg.basis_k), std::to_string(eo.dense_threshold),
                      std::to_string(eo.max_iterations), num(eo.tolerance), std::to_string(eo.seed)});
}

inline fs::path external_descriptor_file(const RunConfig& cfg, const std::string& mesh_id) {
  const fs::path dir(cfg.descriptors.external_dir);
  for (const char* ext : {".csv", ".txt"})
    if (fs::exists(dir / (mesh_id + ext))) return dir / (mesh_id + ext);
  throw MissingArtifactError("no external descriptor file for mesh '" + mesh_id + "' in " + dir.string());
}

/// Descriptor columns normalized to unit mass-L2 norm.
inline desc::DescriptorSet mesh_descriptors(const RunConfig& cfg, const std::string& mesh_id,
                                            const mesh::TriangleMesh& m, const mesh::SpectralBasis& b,
                                            const std::string& bkey, ArtifactCache& cache, std::string& key_out) {
  std::string source_bytes;
  if (cfg.descriptors.kind == "external") source_bytes = read_file_bytes(external_descriptor_file(cfg, mesh_id));
  const auto& w = cfg.descriptors.wks;
  key_out = content_key({"desc-v1", bkey, cfg.descriptors.kind, std::to_string(w.n_descr),
                         std::to_string(w.subsample_step), std::to_string(w.n_eigs), num(w.variance), source_bytes});
  desc::DescriptorSet d;
  d.mesh_id = mesh_id;
  d.kind = cfg.descriptors.kind == "wks" ? desc::DescriptorKind::wks : desc::DescriptorKind::external;
  d.values = cache.matrix("descriptors", key_out, {"descriptors", mesh_id, mesh_id, b.k()}, [&] {
    desc::DescriptorSet raw = cfg.descriptors.kind == "wks"
                                  ? desc::wks(b, w)
                                  : desc::load_external_descriptors(external_descriptor_file(cfg, mesh_id), m);
    return desc::normalize_columns(raw, b.mass).values;
  });
  return d;
}

inline fmap::FunctionalMap initial_map(const PairEntry& p, const RunConfig& cfg, Workspace& ws, ArtifactCache& cache) {
  const auto& b1 = ws.bases.at(p.source);
  const auto& b2 = ws.bases.at(p.target);
  const int k = cfg.k;
  Eigen::MatrixXd C;
  if (p.init_map) {
    // Externally computed initial correspondence: an assignment file or a
    // matrix container holding a map of at least k x k.
    const bool is_matrix = matrix_exists(*p.init_map);
    const std::string bytes =
        is_matrix ? read_file_bytes(matrix_bin_path(*p.init_map)) : read_file_bytes(*p.init_map);
    const std::string key = content_key({"init-ext-v1", ws.basis_keys.at(p.source), ws.basis_keys.at(p.target),
                                         std::to_string(k), is_matrix ? "matrix" : "assignment", bytes});
    C = cache.matrix("init", key, {"fmap", p.source, p.target, k}, [&]() -> Eigen::MatrixXd {
      if (is_matrix) {
        Eigen::MatrixXd M = read_matrix(*p.init_map);
        if (M.rows() < k || M.cols() < k)
          throw DimensionError("initial map " + p.init_map->string() + " is smaller than " + std::to_string(k));
        return M.topLeftCorner(k, k);
      }
      fmap::PointwiseMap pi = fmap::load_assignment(*p.init_map, p.source, p.target);
      return fmap::fmap_from_p2p(pi, b1.truncated(k), b2.truncated(k)).C;
    });
  } else {
    std::string lm_bytes;
    if (p.landmarks) lm_bytes = read_file_bytes(*p.landmarks);
    const std::string key =
        content_key({"init-desc-v1", ws.desc_keys.at(p.source), ws.desc_keys.at(p.target), std::to_string(k),
                     num(cfg.lambda_lap), lm_bytes, std::to_string(cfg.descriptors.landmark_radius),
                     num(cfg.descriptors.landmark_weight)});
    C = cache.matrix("init", key, {"fmap", p.source, p.target, k}, [&] {
      desc::DescriptorSet d1 = ws.descriptors.at(p.source), d2 = ws.descriptors.at(p.target);
      if (p.landmarks) {
        const auto lm = desc::load_landmarks(*p.landmarks, b1.num_vertices(), b2.num_vertices());
        const int r = cfg.descriptors.landmark_radius;
        d1 = desc::concat(d1, desc::normalize_columns(desc::landmark_functions(b1, lm.source(), r), b1.mass));
        d2 = desc::concat(d2, desc::normalize_columns(desc::landmark_functions(b2, lm.target(), r), b2.mass));
      }
      return fmap::fmap_from_descriptors(d1, d2, b1.truncated(k), b2.truncated(k), cfg.lambda_lap,
                                         cfg.descriptors.landmark_weight)
          .C;
    });
  }
  return {p.source, p.target, C};
}

}  // namespace detail

/// Loads meshes, bases, descriptors, ground-truth and initial maps for the
/// given pairs (all pairs when `pair_ids` is empty), computing whatever the
/// cache lacks. Item failures are collected in Workspace::failures.
inline Workspace precompute(const DatasetManifest& man, const RunConfig& cfg, ArtifactCache& cache,
                            const std::vector<std::string>& pair_ids = {}) {
  cfg.validate();
  const long h0 = cache.hits(), m0 = cache.misses();
  std::vector<const PairEntry*> pairs;
  if (pair_ids.empty())
    for (const auto& p : man.pairs) pairs.push_back(&p);
  else
    for (const auto& id : pair_ids) pairs.push_back(&man.pair(id));
  std::set<std::string> mesh_set;
  for (const auto* p : pairs) {
    mesh_set.insert(p->source);
    mesh_set.insert(p->target);
  }
  const std::vector<std::string> mesh_ids(mesh_set.begin(), mesh_set.end());

  Workspace ws;
  std::mutex mu;
  // Repeated warnings (e.g. the same underdetermination notice per pair) are shown once.
  std::set<std::string> seen;
  log::ScopedSink dedupe([&seen, prev = log::warning_sink()](const std::string& msg) {
    if (seen.insert(msg).second) prev(msg);
  });

  const mesh::EigenOptions eo;
  const auto mesh_errors = parallel_for(static_cast<int>(mesh_ids.size()), cfg.workers, [&](int i) {
    const std::string& id = mesh_ids[static_cast<size_t>(i)];
    const fs::path& path = man.meshes.at(id);
    const std::string bytes = read_file_bytes(path);
    mesh::TriangleMesh m = mesh::load_mesh(path, id);
    const std::string bkey = detail::basis_key(bytes, cfg, eo);
    mesh::SpectralBasis b = cache.basis(bkey, id, [&] { return mesh::compute_basis(m, cfg.basis_k, eo); });
    std::string dkey;
    desc::DescriptorSet d = detail::mesh_descriptors(cfg, id, m, b, bkey, cache, dkey);
    std::lock_guard lock(mu);
    ws.meshes[id] = std::move(m);
    ws.bases[id] = std::move(b);
    ws.basis_keys[id] = bkey;
    ws.desc_keys[id] = dkey;
    ws.descriptors[id] = std::move(d);
  });
  for (size_t i = 0; i < mesh_ids.size(); ++i)
    if (!mesh_errors[i].empty()) ws.failures[mesh_ids[i]] = mesh_errors[i];

  const auto pair_errors = parallel_for(static_cast<int>(pairs.size()), cfg.workers, [&](int i) {
    const PairEntry& p = *pairs[static_cast<size_t>(i)];
    for (const auto* id : {&p.source, &p.target})
      if (ws.failures.count(*id)) throw ValidationError("mesh '" + *id + "' failed: " + ws.failures.at(*id));
    const auto& b1 = ws.bases.at(p.source);
    const auto& b2 = ws.bases.at(p.target);
    fmap::PointwiseMap gt = fmap::load_assignment(p.gt, p.source, p.target);
    if (gt.size() != b2.num_vertices())
      throw DimensionError("gt file " + p.gt.string() + " has " + std::to_string(gt.size()) + " entries, target has " +
                           std::to_string(b2.num_vertices()) + " vertices");
    fmap::validate(gt, b1.num_vertices());
    const std::string gkey = content_key({"gt-v1", ws.basis_keys.at(p.source), ws.basis_keys.at(p.target),
                                          std::to_string(cfg.k), read_file_bytes(p.gt)});
    Eigen::MatrixXd G = cache.matrix("gt", gkey, {"fmap", p.source, p.target, cfg.k},
                                     [&] { return fmap::fmap_from_p2p(gt, b1.truncated(cfg.k), b2.truncated(cfg.k)).C; });
    fmap::FunctionalMap init = detail::initial_map(p, cfg, ws, cache);
    std::lock_guard lock(mu);
    ws.gt[p.id] = {p.source, p.target, std::move(G)};
    ws.gt_p2p[p.id] = std::move(gt);
    ws.init[p.id] = std::move(init);
  });
  for (size_t i = 0; i < pairs.size(); ++i)
    if (!pair_errors[i].empty()) ws.failures[pairs[i]->id] = pair_errors[i];
  ws.hits = cache.hits() - h0;
  ws.misses = cache.misses() - m0;
  return ws;
}

/// Throws when any training-split item failed; warns about held-out failures.
inline void require_train_items(const DatasetManifest& man, const Workspace& ws) {
  std::string msg;
  for (const auto& [id, err] : ws.failures) {
    bool train_item = false;
    for (const auto& p : man.pairs)
      if (p.split == Split::train && (p.id == id || p.source == id || p.target == id)) train_item = true;
    if (train_item)
      msg += "\n  " + id + ": " + err;
    else
      log::warn("precompute: " + id + ": " + err);
  }
  if (!msg.empty()) throw ValidationError("precompute failed for training items:" + msg);
}

}  // namespace fridu::pipeline
