#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fridu/core/io.hpp"
#include "fridu/diffusion/edm.hpp"

namespace fridu::edm {

struct TrainConfig {
  long steps = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.999;
  std::vector<double> patch_probs = {0.5, 0.25, 0.25};  // full, half, quarter
  long probe_every = 100;
  long checkpoint_every = 0;  // 0: only at the end
  int probe_size = 8;
  /// Random eigenvector sign flips applied jointly to condition and target.
  bool sign_flips = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 0 || batch_size < 1) throw ConfigError("train: steps must be >= 0 and batch_size >= 1");
    if (!(lr > 0) || !(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("train: bad lr or ema_decay");
    if (patch_probs.empty() || patch_probs.size() > 3) throw ConfigError("train: 1 to 3 patch probabilities");
    double s = 0.0;
    for (double p : patch_probs) {
      if (p < 0) throw ConfigError("train: negative patch probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("train: patch probabilities must sum to 1");
    if (probe_every < 1 || probe_size < 1) throw ConfigError("train: probe_every and probe_size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},         {"batch_size", c.batch_size},   {"lr", c.lr},
       {"beta1", c.beta1},         {"beta2", c.beta2},             {"adam_eps", c.adam_eps},
       {"ema_decay", c.ema_decay}, {"patch_probs", c.patch_probs}, {"probe_every", c.probe_every},
       {"checkpoint_every", c.checkpoint_every}, {"probe_size", c.probe_size}, {"sign_flips", c.sign_flips}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.patch_probs = j.value("patch_probs", d.patch_probs);
  c.probe_every = j.value("probe_every", d.probe_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.probe_size = j.value("probe_size", d.probe_size);
  c.sign_flips = j.value("sign_flips", d.sign_flips);
  c.seed = j.value("seed", d.seed);
}

/// Everything needed to resume training or to sample.
struct TrainState {
  nn::UNetConfig net;
  EDMConfig edm;
  TrainConfig train;
  DataScale scale;
  long step = 0;
  std::vector<float> params, ema, adam_m, adam_v;
};

// Checkpoint layout (all integers little-endian):
//   bytes 0..7   magic "FRIDUCK1"
//   bytes 8..15  u64 length L of the JSON metadata
//   next L bytes UTF-8 JSON {format, net, edm, train, scale, step, seed, num_params, tensors}
//   then four float32 arrays of num_params values each, in the order listed
//   under "tensors": params, ema, adam_m, adam_v. Within each array the
//   parameters follow the network's registration order ("layout" entry).
inline constexpr char kCheckpointMagic[8] = {'F', 'R', 'I', 'D', 'U', 'C', 'K', '1'};

inline void save_checkpoint(const fs::path& path, const TrainState& st,
                            const std::vector<nn::ParamStore<float>::Entry>& layout) {
  const size_t n = st.params.size();
  if (st.ema.size() != n || st.adam_m.size() != n || st.adam_v.size() != n)
    throw ValidationError("checkpoint: tensor sizes differ");
  nlohmann::json meta;
  meta["format"] = "fridu-checkpoint-1";
  meta["net"] = st.net;
  meta["edm"] = st.edm;
  meta["train"] = st.train;
  meta["scale"] = {{"s_data", st.scale.s_data}, {"sigma_data", st.scale.sigma_data}};
  meta["step"] = st.step;
  meta["seed"] = st.train.seed;
  meta["num_params"] = n;
  meta["tensors"] = {"params", "ema", "adam_m", "adam_v"};
  nlohmann::json lay = nlohmann::json::array();
  for (const auto& e : layout) lay.push_back({{"name", e.name}, {"offset", e.offset}, {"size", e.size}});
  meta["layout"] = lay;
  const std::string js = meta.dump();

  std::string buf(kCheckpointMagic, 8);
  std::uint64_t len = js.size();
  for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((len >> (8 * b)) & 0xff));
  buf += js;
  for (const auto* arr : {&st.params, &st.ema, &st.adam_m, &st.adam_v}) {
    static_assert(sizeof(float) == 4);
    for (float f : *arr) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  }
  write_file_atomic(path, buf);
}

inline TrainState load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("checkpoint not found: " + path.string());
  const std::string buf = read_file_bytes(path);
  if (buf.size() < 16 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw ParseError("checkpoint: bad magic in " + path.string());
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[8 + b])) << (8 * b);
  if (16 + len > buf.size()) throw ParseError("checkpoint: truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(buf.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint metadata: ") + e.what());
  }
  TrainState st;
  st.net = meta.at("net").get<nn::UNetConfig>();
  st.edm = meta.at("edm").get<EDMConfig>();
  st.train = meta.at("train").get<TrainConfig>();
  st.scale.s_data = meta.at("scale").at("s_data").get<double>();
  st.scale.sigma_data = meta.at("scale").at("sigma_data").get<double>();
  st.step = meta.at("step").get<long>();
  const size_t n = meta.at("num_params").get<size_t>();
  if (buf.size() != 16 + len + 16 * n) throw ParseError("checkpoint: payload size mismatch");
  size_t pos = 16 + len;
  for (auto* arr : {&st.params, &st.ema, &st.adam_m, &st.adam_v}) {
    arr->resize(n);
    for (size_t i = 0; i < n; ++i, pos += 4) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + b])) << (8 * b);
      std::memcpy(&(*arr)[i], &u, 4);
    }
  }
  return st;
}

/// Network with EMA weights loaded, ready for sampling.
inline std::unique_ptr<nn::UNet<float>> load_sampling_net(const TrainState& st) {
  auto net = std::make_unique<nn::UNet<float>>(st.net);
  if (net->params().size() != st.ema.size())
    throw ConfigError("checkpoint: parameter count does not match the network configuration");
  net->params().value = st.ema;
  return net;
}

struct ProbeRecord {
  long step;
  double train_loss;  // mean over the batches since the previous record
  double probe_loss;
};

struct TrainResult {
  TrainState state;
  std::vector<ProbeRecord> curve;
};

namespace detail {

struct Batch {
  std::vector<PatchSample> samples;
};

/// S2 C S1 with random diagonal sign matrices: the same correspondence
/// expressed in bases whose eigenvectors have other signs.
inline TrainingExample sign_flipped(const TrainingExample& ex, Rng& rng) {
  const auto signs = [&rng](Eigen::Index n) {
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) s[i] = rng.below(2) ? -1.0 : 1.0;
    return s;
  };
  const Eigen::VectorXd s2 = signs(ex.c_gt.rows()), s1 = signs(ex.c_gt.cols());
  TrainingExample out = ex;
  out.c_init = s2.asDiagonal() * ex.c_init * s1.asDiagonal();
  out.c_gt = s2.asDiagonal() * ex.c_gt * s1.asDiagonal();
  return out;
}

inline Batch draw_batch(const std::vector<TrainingExample>& data, const TrainConfig& tc, const EDMConfig& ec,
                        Rng& rng) {
  Batch b;
  const int full = static_cast<int>(data.front().c_gt.rows());
  const int p = draw_resolution(full, tc.patch_probs, rng);
  for (int i = 0; i < tc.batch_size; ++i) {
    const auto& ex = data[rng.below(data.size())];
    const double sigma = sample_sigma(ec, rng);
    if (tc.sign_flips) {
      b.samples.push_back(sample_patch(sign_flipped(ex, rng), sigma, p, rng));
    } else {
      b.samples.push_back(sample_patch(ex, sigma, p, rng));
    }
  }
  return b;
}

/// Weighted loss over a batch; when grad is requested, backpropagates it.
inline double batch_loss(nn::UNet<float>& net, const std::vector<PatchSample>& s, double sd, bool grad) {
  const int n = static_cast<int>(s.size()), p = s.front().size();
  nn::Tensor<float> x(n, 4, p, p);
  std::vector<float> noise(n);
  for (int i = 0; i < n; ++i) {
    fill_input(x, i, s[i].noisy, s[i].cond, s[i].row0, s[i].col0, s[i].full, c_in(s[i].sigma, sd));
    noise[i] = static_cast<float>(c_noise(s[i].sigma));
  }
  const nn::Tensor<float> f = net.forward(x, noise, grad);
  nn::Tensor<float> df(n, 1, p, p);
  double loss = 0.0;
  const double norm = 1.0 / (static_cast<double>(n) * p * p);
  for (int i = 0; i < n; ++i) {
    const double cs = c_skip(s[i].sigma, sd), co = c_out(s[i].sigma, sd), lw = loss_weight(s[i].sigma, sd);
    for (int u = 0; u < p; ++u)
      for (int v = 0; v < p; ++v) {
        const double r = cs * s[i].noisy(u, v) + co * f.at(i, 0, u, v) - s[i].target(u, v);
        loss += lw * r * r * norm;
        df.at(i, 0, u, v) = static_cast<float>(2.0 * lw * co * r * norm);
      }
  }
  if (grad) net.backward(df);
  return loss;
}

}  // namespace detail

using ProgressFn = std::function<void(const ProbeRecord&)>;
using CheckpointFn = std::function<void(const TrainState&)>;

/// Adam on the weighted denoising loss with an EMA of the weights.
/// Each step draws its batch from Rng::derive(seed, step), so a resumed run
/// reproduces the losses of an uninterrupted one.
inline TrainResult train(const std::vector<TrainingExample>& scaled, const nn::UNetConfig& net_cfg,
                         const EDMConfig& edm_cfg, const TrainConfig& tc, const DataScale& scale,
                         const std::optional<TrainState>& resume = std::nullopt, const ProgressFn& progress = {},
                         const CheckpointFn& checkpoint = {}) {
  if (scaled.empty()) throw EmptyDatasetError("train: no training examples");
  tc.validate();
  edm_cfg.validate();
  const int full = static_cast<int>(scaled.front().c_gt.rows());
  for (const auto& e : scaled)
    if (e.c_gt.rows() != full || e.c_gt.cols() != full || e.c_init.rows() != full || e.c_init.cols() != full)
      throw DimensionError("train: all maps must be " + std::to_string(full) + "x" + std::to_string(full));
  if (full != edm_cfg.image_size)
    throw ConfigError("train: maps are " + std::to_string(full) + " but image_size is " +
                      std::to_string(edm_cfg.image_size));
  if (full % (net_cfg.size_multiple() << (tc.patch_probs.size() - 1)) != 0)
    throw ConfigError("train: image_size incompatible with patch resolutions and network depth");

  nn::UNet<float> net(net_cfg, tc.seed);
  TrainState st;
  st.net = net_cfg;
  st.edm = edm_cfg;
  st.train = tc;
  st.scale = scale;
  const size_t np = net.params().size();
  if (resume) {
    if (resume->params.size() != np) throw ConfigError("resume: checkpoint does not match network configuration");
    st.step = resume->step;
    st.params = resume->params;
    st.ema = resume->ema;
    st.adam_m = resume->adam_m;
    st.adam_v = resume->adam_v;
    net.params().value = st.params;
  } else {
    st.params = net.params().value;
    st.ema = st.params;
    st.adam_m.assign(np, 0.f);
    st.adam_v.assign(np, 0.f);
  }

  // Fixed probe batch: full-size crops at log-spaced noise levels.
  std::vector<PatchSample> probe;
  {
    Rng prng = Rng::derive(tc.seed, 0xC0FFEEULL);
    for (int i = 0; i < tc.probe_size; ++i) {
      const double t = tc.probe_size > 1 ? static_cast<double>(i) / (tc.probe_size - 1) : 0.5;
      const double sigma = std::exp(std::log(0.05) + t * (std::log(5.0) - std::log(0.05)));
      probe.push_back(sample_patch(scaled[i % scaled.size()], sigma, full, prng));
    }
  }
  auto probe_loss = [&] { return detail::batch_loss(net, probe, edm_cfg.sigma_data, false); };

  TrainResult res;
  double acc = 0.0;
  long acc_n = 0;
  if (st.step == 0) {
    const ProbeRecord rec{0, std::nan(""), probe_loss()};
    res.curve.push_back(rec);
    if (progress) progress(rec);
  }
  auto& P = net.params();
  while (st.step < tc.steps) {
    Rng rng = Rng::derive(tc.seed, static_cast<std::uint64_t>(st.step) + 1);
    const auto batch = detail::draw_batch(scaled, tc, edm_cfg, rng);
    P.zero_grad();
    const double loss = detail::batch_loss(net, batch.samples, edm_cfg.sigma_data, true);
    if (!std::isfinite(loss)) throw DivergenceError("train: non-finite loss at step " + std::to_string(st.step));
    acc += loss;
    ++acc_n;

    const long t = st.step + 1;
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(t));
    const double decay = std::min(tc.ema_decay, (1.0 + t) / (10.0 + t));
    for (size_t i = 0; i < np; ++i) {
      const double g = P.grad[i];
      const double m = tc.beta1 * st.adam_m[i] + (1 - tc.beta1) * g;
      const double v = tc.beta2 * st.adam_v[i] + (1 - tc.beta2) * g * g;
      st.adam_m[i] = static_cast<float>(m);
      st.adam_v[i] = static_cast<float>(v);
      P.value[i] -= static_cast<float>(tc.lr * (m / bc1) / (std::sqrt(v / bc2) + tc.adam_eps));
      st.ema[i] = static_cast<float>(decay * st.ema[i] + (1 - decay) * P.value[i]);
    }
    st.step = t;

    if (st.step % tc.probe_every == 0 || st.step == tc.steps) {
      const ProbeRecord rec{st.step, acc / static_cast<double>(acc_n), probe_loss()};
      acc = 0.0;
      acc_n = 0;
      res.curve.push_back(rec);
      if (progress) progress(rec);
    }
    if (checkpoint && tc.checkpoint_every > 0 && st.step % tc.checkpoint_every == 0 && st.step != tc.steps) {
      st.params = P.value;
      checkpoint(st);
    }
  }
  st.params = P.value;
  if (checkpoint) checkpoint(st);
  res.state = std::move(st);
  return res;
}

}  // namespace fridu::edm
