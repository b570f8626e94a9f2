#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fridu/core/log.hpp"
#include "fridu/core/rng.hpp"
#include "fridu/diffusion/edm.hpp"
#include "fridu/sampler/losses.hpp"

namespace fridu::guidance {

struct SamplerConfig {
  int num_steps = 50;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  bool second_order = true;
  double churn = 0.0;  // stochastic churn; only 0 is supported

  void validate() const {
    if (num_steps < 2) throw ConfigError("sampler: num_steps must be >= 2");
    if (!(sigma_min > 0 && sigma_min < sigma_max)) throw ConfigError("sampler: need 0 < sigma_min < sigma_max");
    if (!(rho > 0)) throw ConfigError("sampler: rho must be positive");
    if (churn != 0.0) throw ConfigError("sampler: stochastic churn is not supported");
  }
};

struct UpsampleSchedule {
  int k_start = 0;
  int k_end = 0;
  int stages = 0;  // 0: linear ramp; otherwise piecewise-constant with this many levels
};

struct GuidanceConfig {
  int m = 2;         // backward gradient steps
  int k = 5;         // recurrent steps
  double s = 500.0;  // strength of the P2P term
  bool enable_p2p = true;
  double w_orth = 0.0;
  double w_lap = 0.0;
  std::optional<UpsampleSchedule> upsample;
  // Plain gradient steps on the predicted map C: the backward phase takes
  // C <- C - backward_lr * dL/dC, the forward phase
  // C <- C - sigma^2 c_in(sigma)^2 * forward_scale * dL/dC. The P2P loss has
  // Hessian 2I, so a backward step moves 2 * backward_lr * s of the way to the
  // point-to-point projection: s / 5000 with the defaults.
  double backward_lr = 1e-4;
  double forward_scale = 1e-4;

  void validate() const {
    if (m < 0 || k < 1 || !(s >= 0)) throw ConfigError("guidance: need m >= 0, k >= 1, s >= 0");
    if (!(w_orth >= 0) || !(w_lap >= 0)) throw ConfigError("guidance: weights must be nonnegative");
    if (!(backward_lr >= 0) || !(forward_scale >= 0)) throw ConfigError("guidance: step sizes must be nonnegative");
  }

  bool any_loss() const { return (enable_p2p && s > 0) || w_orth > 0 || w_lap > 0; }
  /// Guidance that cannot change the trajectory (sampling is then plain EDM).
  bool inactive() const { return k == 1 && (!any_loss() || (m == 0 && forward_scale == 0)); }

  static GuidanceConfig off() {
    GuidanceConfig g;
    g.m = 0;
    g.k = 1;
    g.s = 0;
    g.enable_p2p = false;
    return g;
  }
};

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = {{"num_steps", c.num_steps}, {"sigma_min", c.sigma_min},       {"sigma_max", c.sigma_max},
       {"rho", c.rho},             {"second_order", c.second_order}, {"churn", c.churn}};
}
inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
  SamplerConfig d;
  c.num_steps = j.value("num_steps", d.num_steps);
  c.sigma_min = j.value("sigma_min", d.sigma_min);
  c.sigma_max = j.value("sigma_max", d.sigma_max);
  c.rho = j.value("rho", d.rho);
  c.second_order = j.value("second_order", d.second_order);
  c.churn = j.value("churn", d.churn);
}
inline void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"m", c.m},
       {"k", c.k},
       {"s", c.s},
       {"enable_p2p", c.enable_p2p},
       {"w_orth", c.w_orth},
       {"w_lap", c.w_lap},
       {"backward_lr", c.backward_lr},
       {"forward_scale", c.forward_scale}};
  if (c.upsample)
    j["upsample"] = {{"k_start", c.upsample->k_start}, {"k_end", c.upsample->k_end}, {"stages", c.upsample->stages}};
  else
    j["upsample"] = nullptr;
}
inline void from_json(const nlohmann::json& j, GuidanceConfig& c) {
  GuidanceConfig d;
  c.m = j.value("m", d.m);
  c.k = j.value("k", d.k);
  c.s = j.value("s", d.s);
  c.enable_p2p = j.value("enable_p2p", d.enable_p2p);
  c.w_orth = j.value("w_orth", d.w_orth);
  c.w_lap = j.value("w_lap", d.w_lap);
  c.backward_lr = j.value("backward_lr", d.backward_lr);
  c.forward_scale = j.value("forward_scale", d.forward_scale);
  c.upsample.reset();
  if (j.contains("upsample") && !j["upsample"].is_null()) {
    const auto& u = j["upsample"];
    c.upsample = UpsampleSchedule{u.at("k_start").get<int>(), u.at("k_end").get<int>(), u.value("stages", 0)};
  }
}

/// sigma_i = (smax^(1/rho) + i/(T-1) (smin^(1/rho) - smax^(1/rho)))^rho, sigma_T = 0.
inline std::vector<double> sigma_schedule(const SamplerConfig& cfg) {
  cfg.validate();
  const int T = cfg.num_steps;
  std::vector<double> s(T + 1);
  const double a = std::pow(cfg.sigma_max, 1.0 / cfg.rho), b = std::pow(cfg.sigma_min, 1.0 / cfg.rho);
  for (int i = 0; i < T; ++i) s[i] = std::pow(a + static_cast<double>(i) / (T - 1) * (b - a), cfg.rho);
  s[0] = cfg.sigma_max;
  s[T - 1] = cfg.sigma_min;
  s[T] = 0.0;
  return s;
}

/// D(x; sigma) on scaled maps.
using Denoiser = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

inline void require_finite(const Eigen::MatrixXd& x, const char* where) {
  if (!x.allFinite()) throw NonFiniteError(std::string(where) + ": non-finite values");
}

/// One step from sigma to sigma_next. `d0`, when given, replaces the first
/// denoiser evaluation (this is where guidance enters).
inline Eigen::MatrixXd edm_step(const Denoiser& den, const Eigen::MatrixXd& x, double sigma, double sigma_next,
                                bool second_order = true, const Eigen::MatrixXd* d0 = nullptr) {
  if (!(sigma > 0)) throw ValidationError("edm_step: sigma must be positive");
  if (sigma_next == sigma) return x;
  const Eigen::MatrixXd D = d0 ? *d0 : den(x, sigma);
  require_finite(D, "edm_step denoiser");
  const Eigen::MatrixXd d = (x - D) / sigma;
  Eigen::MatrixXd next = x + (sigma_next - sigma) * d;
  if (second_order && sigma_next > 0) {
    const Eigen::MatrixXd D2 = den(next, sigma_next);
    require_finite(D2, "edm_step denoiser");
    const Eigen::MatrixXd d2 = (next - D2) / sigma_next;
    next = x + (sigma_next - sigma) * 0.5 * (d + d2);
  }
  require_finite(next, "edm_step");
  return next;
}

/// Basis size used for the P2P projection at outer step i of T
/// (i = 0 is the noisiest step).
inline int upsample_schedule(const GuidanceConfig& g, int i, int T, int full) {
  if (!g.upsample) return full;
  const auto& u = *g.upsample;
  if (u.k_start < 1 || u.k_start > u.k_end || u.k_end > full)
    throw ConfigError("upsample schedule " + std::to_string(u.k_start) + ":" + std::to_string(u.k_end) +
                      " must satisfy 1 <= k_start <= k_end <= " + std::to_string(full));
  if (T <= 0) throw ConfigError("upsample schedule: T must be positive");
  const double frac = static_cast<double>(i) / T;
  if (u.stages > 1) {
    const int stage = std::min(u.stages - 1, static_cast<int>(frac * u.stages));
    return static_cast<int>(std::lround(u.k_start + (u.k_end - u.k_start) * static_cast<double>(stage) / (u.stages - 1)));
  }
  return static_cast<int>(std::lround(u.k_start + (u.k_end - u.k_start) * frac));
}

/// Bases and value scaling the guidance losses need.
struct GuidanceContext {
  const mesh::SpectralBasis* basis1 = nullptr;
  const mesh::SpectralBasis* basis2 = nullptr;
  edm::DataScale scale;
  double sigma_data = 0.5;
};

struct GuidanceLogRow {
  int step;
  double sigma;
  int recurrent_iter;
  double loss_p2p, loss_orth, loss_lap;
};

inline void write_guidance_log(std::ostream& os, const std::vector<GuidanceLogRow>& rows) {
  os << "step,sigma,recurrent_iter,loss_p2p,loss_orth,loss_lap\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%d,%.17g,%.17g,%.17g\n", r.step, r.sigma, r.recurrent_iter, r.loss_p2p,
                  r.loss_orth, r.loss_lap);
    os << buf;
  }
}

namespace detail {

struct TotalLoss {
  double p2p = 0, orth = 0, lap = 0;
  Eigen::MatrixXd grad;  // of the weighted total, functional-map units
};

inline TotalLoss total_loss(const Eigen::MatrixXd& C, const GuidanceConfig& g, const GuidanceContext& ctx,
                            int k_use) {
  TotalLoss t;
  t.grad = Eigen::MatrixXd::Zero(C.rows(), C.cols());
  const int k = static_cast<int>(C.rows());
  if (g.enable_p2p && g.s > 0) {
    const LossGrad l = loss_p2p(C, *ctx.basis1, *ctx.basis2, k_use);
    t.p2p = l.value;
    t.grad += g.s * l.grad;
  }
  if (g.w_orth > 0) {
    const LossGrad l = loss_orth(C);
    t.orth = l.value;
    t.grad += g.w_orth * l.grad;
  }
  if (g.w_lap > 0) {
    const LossGrad l = loss_lap(C, ctx.basis1->lambda.head(k), ctx.basis2->lambda.head(k));
    t.lap = l.value;
    t.grad += g.w_lap * l.grad;
  }
  return t;
}

}  // namespace detail

/// Guided EDM sampling. Returns the final map in functional-map units.
///
/// Per outer step and recurrent iteration: denoise, shift the prediction
/// against the guidance gradient (forward phase), take m plain
/// gradient steps on the prediction itself (backward phase), step to the
/// next noise level with the modified prediction, and, unless this was the
/// last recurrent iteration, re-noise back to the current level.
inline Eigen::MatrixXd guided_sample(const Denoiser& den, int size, const SamplerConfig& sc, const GuidanceConfig& g,
                                     const GuidanceContext& ctx, Rng& rng,
                                     std::vector<GuidanceLogRow>* log_rows = nullptr) {
  sc.validate();
  g.validate();
  const std::vector<double> sig = sigma_schedule(sc);
  const int T = sc.num_steps;
  const bool guided = !g.inactive();
  if (guided && g.any_loss()) {
    if (!ctx.basis1 || !ctx.basis2) throw ConfigError("guided_sample: guidance requires both bases");
    if (ctx.basis1->k() < size || ctx.basis2->k() < size)
      throw ConfigError("guided_sample: bases smaller than the map size");
    upsample_schedule(g, 0, T, size);  // validates the schedule
  }
  const double r = ctx.scale.factor();

  Eigen::MatrixXd x = sig[0] * edm::standard_normal(size, size, rng);
  for (int i = 0; i < T; ++i) {
    const double s_cur = sig[i], s_next = sig[i + 1];
    const int k_use = guided && g.any_loss() ? upsample_schedule(g, i, T, size) : size;
    for (int it = 1; it <= g.k; ++it) {
      Eigen::MatrixXd x_next;
      if (!guided || !g.any_loss()) {
        x_next = edm_step(den, x, s_cur, s_next, sc.second_order);
      } else {
        // Losses and steps live in map units C = r D; D moves by dC / r.
        Eigen::MatrixXd D = den(x, s_cur);
        require_finite(D, "guided_sample denoiser");
        const detail::TotalLoss fwd = detail::total_loss(r * D, g, ctx, k_use);
        if (log_rows) log_rows->push_back({i, s_cur, it, fwd.p2p, fwd.orth, fwd.lap});
        const double w = s_cur * s_cur * std::pow(edm::c_in(s_cur, ctx.sigma_data), 2);
        D -= (w * g.forward_scale / r) * fwd.grad;
        for (int b = 0; b < g.m; ++b) D -= (g.backward_lr / r) * detail::total_loss(r * D, g, ctx, k_use).grad;
        require_finite(D, "guided_sample guidance");
        x_next = edm_step(den, x, s_cur, s_next, sc.second_order, &D);
      }
      if (it < g.k && s_next < s_cur) {
        const double renoise = std::sqrt(s_cur * s_cur - s_next * s_next);
        x = x_next + renoise * edm::standard_normal(size, size, rng);
      } else {
        x = std::move(x_next);
      }
    }
  }
  return ctx.scale.unscale(x);
}

/// Builds a denoiser for a given (scaled) condition.
using DenoiserFactory = std::function<Denoiser(const Eigen::MatrixXd& scaled_cond)>;

/// guided_sample, then `iterations` more passes each conditioned on the
/// previous output.
inline Eigen::MatrixXd recursive_refine(const DenoiserFactory& make, const Eigen::MatrixXd& cond_unscaled,
                                        const SamplerConfig& sc, const GuidanceConfig& g, const GuidanceContext& ctx,
                                        Rng& rng, int iterations, std::vector<GuidanceLogRow>* log_rows = nullptr) {
  if (iterations < 0) throw ConfigError("recursive_refine: iterations must be >= 0");
  if (iterations > 1)
    log::warn("recursive refinement with " + std::to_string(iterations) +
              " iterations; more than one extra iteration tends to degrade the map");
  Eigen::MatrixXd cond = cond_unscaled;
  Eigen::MatrixXd out;
  for (int pass = 0; pass <= iterations; ++pass) {
    const Denoiser den = make(ctx.scale.scale(cond));
    out = guided_sample(den, static_cast<int>(cond.rows()), sc, g, ctx, rng, log_rows);
    cond = out;
  }
  return out;
}

/// Denoiser backed by a trained network, conditioned on a full scaled map.
template <typename T>
Denoiser network_denoiser(nn::UNet<T>& net, const Eigen::MatrixXd& scaled_cond, double sigma_data) {
  return [&net, scaled_cond, sigma_data](const Eigen::MatrixXd& x, double sigma) {
    return edm::denoise(net, x, scaled_cond, sigma, sigma_data);
  };
}

}  // namespace fridu::guidance
