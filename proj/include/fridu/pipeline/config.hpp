#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "fridu/core/io.hpp"
#include "fridu/descriptors/descriptors.hpp"
#include "fridu/diffusion/train.hpp"
#include "fridu/sampler/sampler.hpp"

namespace fridu::pipeline {

struct DescriptorConfig {
  std::string kind = "wks";  // wks | external
  desc::WksParams wks;
  /// For kind=external: directory holding <mesh_id>.csv (or .txt) tables.
  std::string external_dir;
  int landmark_radius = 0;
  double landmark_weight = 1.0;
};

struct ZoomOutConfig {
  int k_start = 16;
  int k_end = 0;  // 0: the map size
  int step = 1;
};

/// Everything a pipeline command needs besides the manifest.
struct RunConfig {
  int k = 64;         // functional-map side
  int basis_k = 150;  // eigenpairs computed per mesh
  DescriptorConfig descriptors;
  double lambda_lap = 1e-3;  // Laplacian penalty of the initial-map solve
  ZoomOutConfig zoomout;
  nn::UNetConfig net;
  edm::EDMConfig edm;
  edm::TrainConfig train;
  guidance::SamplerConfig sampler;
  guidance::GuidanceConfig guidance;
  int recursive = 0;
  std::uint64_t seed = 0;
  std::string cache_dir = "fridu-cache";
  std::string out_dir = "fridu-out";
  int workers = 0;  // 0: hardware concurrency

  void validate() const {
    if (k < 1 || basis_k < k) throw ConfigError("config: need 1 <= k <= basis_k");
    if (descriptors.kind != "wks" && descriptors.kind != "external")
      throw ConfigError("config: descriptors.kind must be 'wks' or 'external'");
    if (descriptors.kind == "wks" && descriptors.wks.n_eigs > basis_k)
      throw ConfigError("config: WKS needs basis_k >= n_eigs = " + std::to_string(descriptors.wks.n_eigs));
    if (descriptors.kind == "external" && descriptors.external_dir.empty())
      throw ConfigError("config: descriptors.external_dir is required for external descriptors");
    if (lambda_lap < 0) throw ConfigError("config: lambda_lap must be >= 0");
    if (edm.image_size != k)
      throw ConfigError("config: edm.image_size (" + std::to_string(edm.image_size) + ") must equal k (" +
                        std::to_string(k) + ")");
    if (recursive < 0) throw ConfigError("config: recursive must be >= 0");
    net.validate();
    edm.validate();
    train.validate();
    sampler.validate();
    guidance.validate();
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  const auto& w = c.descriptors.wks;
  j = {{"k", c.k},
       {"basis_k", c.basis_k},
       {"descriptors",
        {{"kind", c.descriptors.kind},
         {"wks", {{"n_descr", w.n_descr}, {"subsample_step", w.subsample_step}, {"n_eigs", w.n_eigs}, {"variance", w.variance}}},
         {"external_dir", c.descriptors.external_dir},
         {"landmark_radius", c.descriptors.landmark_radius},
         {"landmark_weight", c.descriptors.landmark_weight}}},
       {"lambda_lap", c.lambda_lap},
       {"zoomout", {{"k_start", c.zoomout.k_start}, {"k_end", c.zoomout.k_end}, {"step", c.zoomout.step}}},
       {"net", c.net},
       {"edm", c.edm},
       {"train", c.train},
       {"sampler", c.sampler},
       {"guidance", c.guidance},
       {"recursive", c.recursive},
       {"seed", c.seed},
       {"cache_dir", c.cache_dir},
       {"out_dir", c.out_dir},
       {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::set<std::string> known = {"k",   "basis_k", "descriptors", "lambda_lap", "zoomout",
                                              "net", "edm",     "train",       "sampler",    "guidance",
                                              "recursive", "seed", "cache_dir", "out_dir",   "workers"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  RunConfig d;
  c.k = j.value("k", d.k);
  c.basis_k = j.value("basis_k", d.basis_k);
  c.descriptors = d.descriptors;
  if (j.contains("descriptors")) {
    const auto& e = j["descriptors"];
    c.descriptors.kind = e.value("kind", d.descriptors.kind);
    if (e.contains("wks")) {
      const auto& w = e["wks"];
      c.descriptors.wks.n_descr = w.value("n_descr", d.descriptors.wks.n_descr);
      c.descriptors.wks.subsample_step = w.value("subsample_step", d.descriptors.wks.subsample_step);
      c.descriptors.wks.n_eigs = w.value("n_eigs", d.descriptors.wks.n_eigs);
      c.descriptors.wks.variance = w.value("variance", d.descriptors.wks.variance);
    }
    c.descriptors.external_dir = e.value("external_dir", d.descriptors.external_dir);
    c.descriptors.landmark_radius = e.value("landmark_radius", d.descriptors.landmark_radius);
    c.descriptors.landmark_weight = e.value("landmark_weight", d.descriptors.landmark_weight);
  }
  c.lambda_lap = j.value("lambda_lap", d.lambda_lap);
  c.zoomout = d.zoomout;
  if (j.contains("zoomout")) {
    const auto& z = j["zoomout"];
    c.zoomout.k_start = z.value("k_start", d.zoomout.k_start);
    c.zoomout.k_end = z.value("k_end", d.zoomout.k_end);
    c.zoomout.step = z.value("step", d.zoomout.step);
  }
  c.net = j.contains("net") ? j["net"].get<nn::UNetConfig>() : d.net;
  c.edm = j.contains("edm") ? j["edm"].get<edm::EDMConfig>() : d.edm;
  c.train = j.contains("train") ? j["train"].get<edm::TrainConfig>() : d.train;
  c.sampler = j.contains("sampler") ? j["sampler"].get<guidance::SamplerConfig>() : d.sampler;
  c.guidance = j.contains("guidance") ? j["guidance"].get<guidance::GuidanceConfig>() : d.guidance;
  c.recursive = j.value("recursive", d.recursive);
  c.seed = j.value("seed", d.seed);
  c.cache_dir = j.value("cache_dir", d.cache_dir);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.workers = j.value("workers", d.workers);
}

inline RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("config not found: " + path.string());
  try {
    return nlohmann::json::parse(read_file_bytes(path)).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
}

inline void save_run_config(const fs::path& path, const RunConfig& c) {
  write_file_atomic(path, nlohmann::json(c).dump(2) + "\n");
}

}  // namespace fridu::pipeline
