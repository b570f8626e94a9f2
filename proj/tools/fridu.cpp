#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "fridu/pipeline/commands.hpp"
#include "fridu/pipeline/synthetic.hpp"

using namespace fridu;
using namespace fridu::pipeline;

namespace {

struct Globals {
  std::string manifest, config, cache_dir, out_dir;
  std::optional<std::uint64_t> seed;
  int workers = -1;
};

struct RefineFlags {
  bool no_guidance = false;
  std::optional<int> recursive, m, k;
  std::optional<double> s, w_orth, w_lap;
  std::string upsample, tag = "default";
  std::vector<std::string> pairs;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (const char* env = std::getenv("FRIDU_CACHE"); env && *env) cfg.cache_dir = env;
  if (!g.cache_dir.empty()) cfg.cache_dir = g.cache_dir;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (g.seed) cfg.seed = *g.seed;
  if (g.workers >= 0) cfg.workers = g.workers;
  return cfg;
}

DatasetManifest require_manifest(const Globals& g) {
  if (g.manifest.empty()) throw ConfigError("--manifest is required for this command");
  return load_manifest(g.manifest);
}

guidance::UpsampleSchedule parse_upsample(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1)), 0};
  } catch (const std::logic_error&) {
    throw ConfigError("--upsample expects k_start:k_end, got '" + s + "'");
  }
}

void apply_refine_flags(const RefineFlags& f, RunConfig& cfg) {
  auto& g = cfg.guidance;
  if (f.no_guidance) g = guidance::GuidanceConfig::off();
  if (f.s) g.s = *f.s;
  if (f.m) g.m = *f.m;
  if (f.k) g.k = *f.k;
  if (f.w_orth) g.w_orth = *f.w_orth;
  if (f.w_lap) g.w_lap = *f.w_lap;
  if (!f.upsample.empty()) g.upsample = parse_upsample(f.upsample);
  if (f.recursive) cfg.recursive = *f.recursive;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional-map refinement with a conditional diffusion model"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--manifest", g.manifest, "Dataset manifest (JSON)");
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--cache-dir", g.cache_dir, "Artifact cache (default: $FRIDU_CACHE or the configured path)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--workers", g.workers, "Worker threads for precompute (0: all cores)");

  auto* pre = app.add_subcommand("precompute", "Compute bases, descriptors, ground-truth and initial maps");

  bool resume = false;
  auto* train = app.add_subcommand("train", "Train the denoiser on the train split");
  train->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");

  RefineFlags rf;
  std::string checkpoint;
  auto* refine = app.add_subcommand("refine", "Sample refined maps for the selected pairs");
  refine->add_flag("--no-guidance", rf.no_guidance, "Plain conditional sampling");
  refine->add_option("--recursive", rf.recursive, "Extra passes conditioned on the previous output");
  refine->add_option("--upsample", rf.upsample, "Spectral upsampling of the guidance, k_start:k_end");
  refine->add_option("--w-orth", rf.w_orth, "Weight of the orthogonality loss");
  refine->add_option("--w-lap", rf.w_lap, "Weight of the Laplacian commutativity loss");
  refine->add_option("--s", rf.s, "Strength of the point-to-point loss");
  refine->add_option("--m", rf.m, "Backward guidance steps");
  refine->add_option("--k", rf.k, "Recurrent steps per noise level");
  refine->add_option("--tag", rf.tag, "Output subdirectory under refined/");
  refine->add_option("--checkpoint", checkpoint, "Checkpoint (default: <out-dir>/train/checkpoint.fck)");
  refine->add_option("--pairs", rf.pairs, "Pair ids (default: test split)");

  std::vector<std::string> zo_pairs;
  int zo_start = 0, zo_end = -1, zo_step = 0;
  auto* zoom = app.add_subcommand("zoomout", "ZoomOut baseline from the initial maps");
  zoom->add_option("--k-start", zo_start, "Initial spectral size");
  zoom->add_option("--k-end", zo_end, "Final spectral size (0: k)");
  zoom->add_option("--step", zo_step, "Spectral increment per iteration");
  zoom->add_option("--pairs", zo_pairs, "Pair ids (default: test split)");

  std::vector<std::string> sources{"initial", "zoomout", "refined"}, ev_pairs;
  std::string report = "report";
  bool svg = false;
  auto* eval = app.add_subcommand("evaluate", "Score map sources against ground truth");
  eval->add_option("--sources", sources, "initial, gt, zoomout, refined[:tag]");
  eval->add_option("--report", report, "Report name under eval/");
  eval->add_option("--pairs", ev_pairs, "Pair ids (default: test split)");
  eval->add_flag("--svg", svg, "Also write curves.svg");

  SyntheticConfig sc;
  std::string syn_out;
  auto* syn = app.add_subcommand("make-synthetic", "Generate a near-isometric synthetic dataset");
  syn->add_option("--out", syn_out, "Output directory")->required();
  syn->add_option("--n-shapes", sc.n_shapes);
  syn->add_option("--n-vertices", sc.n_vertices);
  syn->add_option("--amplitude", sc.amplitude);
  syn->add_option("--n-train", sc.n_train, "Shapes used for training pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors count as validation errors; help exits 0.
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (syn->parsed()) {
      if (g.seed) sc.seed = *g.seed;
      const auto man = make_synthetic_dataset(syn_out, sc);
      std::cout << "wrote " << man.meshes.size() << " meshes and " << man.pairs.size() << " pairs to " << syn_out
                << "\n";
      return 0;
    }
    RunConfig cfg = resolve_config(g);
    const DatasetManifest man = require_manifest(g);
    ArtifactCache cache(cfg.cache_dir);

    if (pre->parsed()) {
      const Workspace ws = cmd_precompute(man, cfg, cache);
      std::cout << "precompute: " << ws.hits << " cache hits, " << ws.misses << " computed, " << ws.failures.size()
                << " failures\n";
    } else if (train->parsed()) {
      const auto out = cmd_train(man, cfg, cache, resume, [](const edm::ProbeRecord& r) {
        std::cout << "step " << r.step << " train " << r.train_loss << " probe " << r.probe_loss << std::endl;
      });
      std::cout << "checkpoint: " << out.checkpoint.string() << "\n";
    } else if (refine->parsed()) {
      apply_refine_flags(rf, cfg);
      const fs::path ck = checkpoint.empty() ? checkpoint_path(cfg) : fs::path(checkpoint);
      const auto recs = cmd_refine(man, cfg, cache, ck, rf.pairs, rf.tag);
      for (const auto& r : recs) std::cout << r.pair_id << " " << fmt("%.2f", r.seconds) << " s\n";
      std::cout << "refined maps: " << refined_dir(cfg, rf.tag).string() << "\n";
    } else if (zoom->parsed()) {
      if (zo_start > 0) cfg.zoomout.k_start = zo_start;
      if (zo_end >= 0) cfg.zoomout.k_end = zo_end;
      if (zo_step > 0) cfg.zoomout.step = zo_step;
      cmd_zoomout(man, cfg, cache, zo_pairs);
      std::cout << "zoomout maps: " << zoomout_dir(cfg).string() << "\n";
    } else if (eval->parsed()) {
      const auto rep = cmd_evaluate(man, cfg, cache, sources, ev_pairs, report, svg);
      for (const auto& [label, v] : rep.mean_geodesic_x100)
        std::cout << label << ": geodesic x100 " << fmt("%.4f", v) << ", euclidean "
                  << fmt("%.6f", rep.mean_euclidean.at(label)) << "\n";
      std::cout << "report: " << rep.dir.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::validation ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
