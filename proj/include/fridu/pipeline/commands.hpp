#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fridu/diffusion/train.hpp"
#include "fridu/fmap/metrics.hpp"
#include "fridu/pipeline/precompute.hpp"
#include "fridu/sampler/sampler.hpp"

namespace fridu::pipeline {

// Output layout under RunConfig::out_dir:
//   train/checkpoint.fck, train/training_curve.csv
//   refined/<tag>/<pair>.fmap.{bin,json}, <pair>.assignment.txt, <pair>.guidance.csv, timing.csv
//   zoomout/<pair>.fmap.{bin,json}, <pair>.assignment.txt
//   eval/<report>/per_pair.csv, aggregate.csv, curves.csv[, curves.svg]

inline fs::path checkpoint_path(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "train" / "checkpoint.fck"; }
inline fs::path refined_dir(const RunConfig& cfg, const std::string& tag) {
  return fs::path(cfg.out_dir) / "refined" / tag;
}
inline fs::path zoomout_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "zoomout"; }

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Pair ids to process: the explicit list, or the whole split.
inline std::vector<std::string> select_pairs(const DatasetManifest& man, const std::vector<std::string>& ids,
                                             Split fallback) {
  if (!ids.empty()) {
    for (const auto& id : ids) man.pair(id);
    return ids;
  }
  std::vector<std::string> out;
  for (const auto* p : man.split(fallback)) out.push_back(p->id);
  return out;
}

inline Workspace cmd_precompute(const DatasetManifest& man, const RunConfig& cfg, ArtifactCache& cache) {
  Workspace ws = precompute(man, cfg, cache);
  require_train_items(man, ws);
  return ws;
}

// --------------------------------------------------------------------------
// train

struct TrainOutput {
  fs::path checkpoint;
  fs::path curve_csv;
  edm::TrainState state;
  std::vector<edm::ProbeRecord> curve;  // full curve, including records before a resume
};

inline std::vector<edm::TrainingExample> training_examples(const DatasetManifest& man, const Workspace& ws) {
  std::vector<edm::TrainingExample> ex;
  for (const auto* p : man.split(Split::train)) ex.push_back({p->id, ws.init.at(p->id).C, ws.gt.at(p->id).C});
  return ex;
}

inline std::string curve_csv(const std::vector<edm::ProbeRecord>& curve) {
  std::string out = "step,train_loss,probe_loss\n";
  for (const auto& r : curve)
    out += std::to_string(r.step) + "," + (std::isnan(r.train_loss) ? "" : fmt("%.9g", r.train_loss)) + "," +
           fmt("%.9g", r.probe_loss) + "\n";
  return out;
}

inline std::vector<edm::ProbeRecord> read_curve_csv(const fs::path& path) {
  std::vector<edm::ProbeRecord> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_file_bytes(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    if (a.empty()) continue;
    out.push_back({std::stol(a), b.empty() ? std::nan("") : std::stod(b), std::stod(c)});
  }
  return out;
}

/// Trains on the train split. With `resume`, continues from the checkpoint in
/// out_dir (if any) up to cfg.train.steps.
inline TrainOutput cmd_train(const DatasetManifest& man, const RunConfig& cfg, ArtifactCache& cache, bool resume,
                             const edm::ProgressFn& progress = {}) {
  cfg.validate();
  if (man.split(Split::train).empty()) throw EmptyDatasetError("train: the manifest has no training pairs");
  std::vector<std::string> ids;
  for (const auto* p : man.split(Split::train)) ids.push_back(p->id);
  Workspace ws = precompute(man, cfg, cache, ids);
  require_train_items(man, ws);
  const auto examples = training_examples(man, ws);

  TrainOutput out;
  out.checkpoint = checkpoint_path(cfg);
  out.curve_csv = out.checkpoint.parent_path() / "training_curve.csv";
  edm::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  std::optional<edm::TrainState> prev;
  edm::DataScale scale;
  if (resume && fs::exists(out.checkpoint)) {
    prev = edm::load_checkpoint(out.checkpoint);
    if (nlohmann::json(prev->net) != nlohmann::json(cfg.net) || prev->edm.image_size != cfg.k)
      throw ConfigError("resume: checkpoint network or image size differs from the configuration");
    if (prev->train.seed != tc.seed) throw ConfigError("resume: checkpoint seed differs from the configuration");
    scale = prev->scale;
    for (const auto& r : read_curve_csv(out.curve_csv))
      if (r.step <= prev->step) out.curve.push_back(r);
  } else {
    scale = edm::dataset_scale(examples, cfg.edm.sigma_data);
  }
  const auto scaled = edm::apply_scale(examples, scale);
  const auto layout = nn::UNet<float>(cfg.net).params().entries;
  auto save = [&](const edm::TrainState& st) { edm::save_checkpoint(out.checkpoint, st, layout); };
  edm::TrainResult res = edm::train(scaled, cfg.net, cfg.edm, tc, scale, prev, progress, save);
  out.curve.insert(out.curve.end(), res.curve.begin(), res.curve.end());
  write_file_atomic(out.curve_csv, curve_csv(out.curve));
  out.state = std::move(res.state);
  return out;
}

// --------------------------------------------------------------------------
// refine

struct RefineRecord {
  std::string pair_id;
  Eigen::MatrixXd C;
  fmap::PointwiseMap p2p;
  double seconds = 0.0;
};

inline std::uint64_t pair_stream(const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : id) h = (h ^ c) * 1099511628211ULL;
  return h;
}

inline void write_map_artifacts(const fs::path& dir, const std::string& pair_id, const fmap::FunctionalMap& f,
                                const fmap::PointwiseMap& p2p) {
  write_matrix(dir / (pair_id + ".fmap"), f.C, {"fmap", f.source_id, f.target_id, f.k1()});
  write_file_atomic(dir / (pair_id + ".assignment.txt"), fmap::assignment_text(p2p));
}

/// Samples a refined map for each selected pair (default: the test split)
/// and writes it under refined/<tag>.
inline std::vector<RefineRecord> cmd_refine(const DatasetManifest& man, const RunConfig& cfg, ArtifactCache& cache,
                                            const fs::path& checkpoint, const std::vector<std::string>& pair_ids,
                                            const std::string& tag = "default") {
  cfg.validate();
  const auto ids = select_pairs(man, pair_ids, Split::test);
  const edm::TrainState st = edm::load_checkpoint(checkpoint);
  if (st.edm.image_size != cfg.k)
    throw ConfigError("refine: checkpoint was trained on " + std::to_string(st.edm.image_size) + "x" +
                      std::to_string(st.edm.image_size) + " maps but k = " + std::to_string(cfg.k));
  auto net = edm::load_sampling_net(st);
  Workspace ws = precompute(man, cfg, cache, ids);
  const fs::path dir = refined_dir(cfg, tag);
  std::string timing = "pair_id,seconds\n";
  std::vector<RefineRecord> out;
  for (const auto& id : ids) {
    if (ws.failures.count(id)) throw ValidationError("refine: precompute failed for " + id + ": " + ws.failures.at(id));
    const PairEntry& p = man.pair(id);
    const auto& b1 = ws.basis(p.source);
    const auto& b2 = ws.basis(p.target);
    const Eigen::MatrixXd& cond = ws.init.at(id).C;
    if (cond.rows() != cfg.k || cond.cols() != cfg.k) throw ConfigError("refine: initial map of " + id + " is not k x k");
    guidance::GuidanceContext ctx{&b1, &b2, st.scale, st.edm.sigma_data};
    guidance::DenoiserFactory make = [&](const Eigen::MatrixXd& scaled_cond) {
      return guidance::network_denoiser(*net, scaled_cond, st.edm.sigma_data);
    };
    Rng rng = Rng::derive(cfg.seed, pair_stream(id));
    std::vector<guidance::GuidanceLogRow> rows;
    const auto t0 = std::chrono::steady_clock::now();
    Eigen::MatrixXd C = guidance::recursive_refine(make, cond, cfg.sampler, cfg.guidance, ctx, rng, cfg.recursive, &rows);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fmap::FunctionalMap f{p.source, p.target, C};
    fmap::PointwiseMap p2p = fmap::p2p_from_fmap(f, b1, b2);
    write_map_artifacts(dir, id, f, p2p);
    std::ostringstream log;
    guidance::write_guidance_log(log, rows);
    write_file_atomic(dir / (id + ".guidance.csv"), log.str());
    timing += id + "," + fmt("%.3f", secs) + "\n";
    out.push_back({id, std::move(C), std::move(p2p), secs});
  }
  write_file_atomic(dir / "timing.csv", timing);
  return out;
}

// --------------------------------------------------------------------------
// zoomout

inline std::vector<RefineRecord> cmd_zoomout(const DatasetManifest& man, const RunConfig& cfg, ArtifactCache& cache,
                                             const std::vector<std::string>& pair_ids) {
  cfg.validate();
  const int k_end = cfg.zoomout.k_end > 0 ? cfg.zoomout.k_end : cfg.k;
  const int k_start = cfg.zoomout.k_start;
  if (cfg.zoomout.step < 1 || cfg.zoomout.step > k_end - k_start)
    throw ConfigError("zoomout: step " + std::to_string(cfg.zoomout.step) + " must be in [1, k_end - k_start = " +
                      std::to_string(k_end - k_start) + "]");
  if (k_start < 1 || k_start > cfg.k || k_end > cfg.basis_k)
    throw ConfigError("zoomout: need 1 <= k_start <= k and k_end <= basis_k");
  const auto ids = select_pairs(man, pair_ids, Split::test);
  Workspace ws = precompute(man, cfg, cache, ids);
  std::vector<RefineRecord> out;
  for (const auto& id : ids) {
    if (ws.failures.count(id)) throw ValidationError("zoomout: precompute failed for " + id + ": " + ws.failures.at(id));
    const PairEntry& p = man.pair(id);
    const auto& b1 = ws.basis(p.source);
    const auto& b2 = ws.basis(p.target);
    const auto t0 = std::chrono::steady_clock::now();
    const fmap::FunctionalMap f = fmap::zoomout(ws.init.at(id), b1, b2, k_start, k_end, cfg.zoomout.step);
    fmap::PointwiseMap p2p = fmap::p2p_from_fmap(f, b1, b2);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_map_artifacts(zoomout_dir(cfg), id, f, p2p);
    out.push_back({id, f.C, std::move(p2p), secs});
  }
  return out;
}

// --------------------------------------------------------------------------
// evaluate

/// A set of maps to score: "initial", "gt", "zoomout", or "refined:<tag>".
struct MapSource {
  std::string label;
  std::string kind;  // initial | gt | dir
  fs::path dir;
};

inline MapSource parse_source(const std::string& name, const RunConfig& cfg) {
  if (name == "initial" || name == "gt") return {name, name, {}};
  if (name == "zoomout") return {name, "dir", zoomout_dir(cfg)};
  if (name.rfind("refined", 0) == 0) {
    const std::string tag = name.size() > 8 && name[7] == ':' ? name.substr(8) : "default";
    if (name.size() > 7 && name[7] != ':') throw ConfigError("unknown map source '" + name + "'");
    return {name == "refined" ? "refined:default" : name, "dir", refined_dir(cfg, tag)};
  }
  throw ConfigError("unknown map source '" + name + "'; expected initial, gt, zoomout or refined[:tag]");
}

struct PairScore {
  std::string source, pair_id;
  double geodesic_x100 = 0.0, euclidean = 0.0;
  Eigen::VectorXd geodesic_per_vertex;
};

struct EvalReport {
  std::vector<PairScore> scores;
  std::map<std::string, double> mean_geodesic_x100, mean_euclidean;  // per source label
  fs::path dir;
};

inline std::vector<double> curve_thresholds() { return fmap::linear_thresholds(0.25, 51); }

inline std::string curves_svg(const std::vector<std::string>& labels,
                              const std::map<std::string, std::vector<double>>& curves,
                              const std::vector<double>& thresholds) {
  const double W = 480, H = 320, L = 50, B = 40, R = 150, T = 15;
  const double pw = W - L - R, ph = H - T - B;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 8 << "\" font-size=\"12\" text-anchor=\"middle\">geodesic error</text>\n";
  s << "<text x=\"12\" y=\"" << T + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << T + ph / 2
    << ")\" text-anchor=\"middle\">fraction of vertices</text>\n";
  const double tmax = thresholds.empty() ? 1.0 : thresholds.back();
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto& c = curves.at(labels[i]);
    s << "<polyline fill=\"none\" stroke=\"" << colors[i % 7] << "\" stroke-width=\"1.5\" points=\"";
    for (size_t j = 0; j < c.size(); ++j)
      s << fmt("%.2f", L + pw * thresholds[j] / tmax) << "," << fmt("%.2f", T + ph * (1.0 - c[j])) << " ";
    s << "\"/>\n";
    s << "<text x=\"" << L + pw + 8 << "\" y=\"" << T + 14 + 16 * i << "\" font-size=\"11\" fill=\"" << colors[i % 7]
      << "\">" << labels[i] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// Scores each source on the selected pairs (default: test split) and writes
/// per_pair.csv, aggregate.csv and curves.csv under eval/<report>.
inline EvalReport cmd_evaluate(const DatasetManifest& man, const RunConfig& cfg, ArtifactCache& cache,
                               const std::vector<std::string>& sources, const std::vector<std::string>& pair_ids,
                               const std::string& report = "report", bool svg = false) {
  cfg.validate();
  if (sources.empty()) throw ConfigError("evaluate: no map sources given");
  std::vector<MapSource> srcs;
  for (const auto& s : sources) srcs.push_back(parse_source(s, cfg));
  const auto ids = select_pairs(man, pair_ids, Split::test);
  for (const auto& src : srcs)
    if (src.kind == "dir")
      for (const auto& id : ids)
        if (!matrix_exists(src.dir / (id + ".fmap")))
          throw MissingArtifactError("evaluate: no " + src.label + " map for pair " + id + " in " + src.dir.string());
  Workspace ws = precompute(man, cfg, cache, ids);

  EvalReport rep;
  rep.dir = fs::path(cfg.out_dir) / "eval" / report;
  std::map<std::string, mesh::GeodesicCache> geo;
  for (const auto& id : ids) {
    if (ws.failures.count(id)) throw ValidationError("evaluate: precompute failed for " + id + ": " + ws.failures.at(id));
    const PairEntry& p = man.pair(id);
    const auto& m1 = ws.meshes.at(p.source);
    auto it = geo.find(p.source);
    if (it == geo.end()) it = geo.emplace(p.source, mesh::GeodesicCache(m1)).first;
    const auto& gt = ws.gt_p2p.at(id);
    for (const auto& src : srcs) {
      fmap::PointwiseMap pi;
      if (src.kind == "gt") {
        pi = gt;
      } else {
        const fmap::FunctionalMap f{p.source, p.target,
                                    src.kind == "initial" ? ws.init.at(id).C : read_matrix(src.dir / (id + ".fmap"))};
        pi = fmap::p2p_from_fmap(f, ws.basis(p.source), ws.basis(p.target));
      }
      const auto g = fmap::geodesic_error(pi, gt, m1, it->second);
      const auto e = fmap::normalized_euclidean_error(pi, gt, m1);
      rep.scores.push_back({src.label, id, 100.0 * g.mean, e.mean, g.per_vertex});
    }
  }

  std::string per_pair = "source,pair_id,geodesic_error_x100,euclidean_error\n";
  std::string aggregate = "source,num_pairs,mean_geodesic_error_x100,mean_euclidean_error\n";
  std::string curves = "source,threshold,fraction\n";
  std::vector<std::string> labels;
  std::map<std::string, std::vector<double>> curve_of;
  const auto th = curve_thresholds();
  for (const auto& src : srcs) {
    labels.push_back(src.label);
    double sg = 0, se = 0;
    int n = 0;
    std::vector<double> all;
    for (const auto& s : rep.scores) {
      if (s.source != src.label) continue;
      per_pair += s.source + "," + s.pair_id + "," + fmt("%.6f", s.geodesic_x100) + "," + fmt("%.8f", s.euclidean) + "\n";
      sg += s.geodesic_x100;
      se += s.euclidean;
      ++n;
      all.insert(all.end(), s.geodesic_per_vertex.data(), s.geodesic_per_vertex.data() + s.geodesic_per_vertex.size());
    }
    rep.mean_geodesic_x100[src.label] = n ? sg / n : 0.0;
    rep.mean_euclidean[src.label] = n ? se / n : 0.0;
    aggregate += src.label + "," + std::to_string(n) + "," + fmt("%.6f", rep.mean_geodesic_x100[src.label]) + "," +
                 fmt("%.8f", rep.mean_euclidean[src.label]) + "\n";
    const auto c = fmap::error_curve(Eigen::Map<const Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size())), th);
    for (size_t j = 0; j < th.size(); ++j) curves += src.label + "," + fmt("%.4f", th[j]) + "," + fmt("%.6f", c[j]) + "\n";
    curve_of[src.label] = c;
  }
  write_file_atomic(rep.dir / "per_pair.csv", per_pair);
  write_file_atomic(rep.dir / "aggregate.csv", aggregate);
  write_file_atomic(rep.dir / "curves.csv", curves);
  if (svg) write_file_atomic(rep.dir / "curves.svg", curves_svg(labels, curve_of, th));
  return rep;
}

}  // namespace fridu::pipeline
