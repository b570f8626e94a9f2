#pragma once

#include <Eigen/Core>

#include <cmath>
#include <json.hpp>
#include <string>
#include <vector>

#include "fridu/core/error.hpp"
#include "fridu/core/rng.hpp"
#include "fridu/diffusion/unet.hpp"

namespace fridu::edm {

struct EDMConfig {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double p_mean = -1.2;
  double p_std = 1.2;
  double sigma_data = 0.5;
  int image_size = 64;

  void validate() const {
    if (!(sigma_min > 0 && sigma_min < sigma_max)) throw ConfigError("edm: need 0 < sigma_min < sigma_max");
    if (!(p_std >= 0)) throw ConfigError("edm: p_std must be nonnegative");
    if (!(sigma_data > 0)) throw ConfigError("edm: sigma_data must be positive");
    if (!(rho > 0)) throw ConfigError("edm: rho must be positive");
    if (image_size < 4 || image_size % 4 != 0) throw ConfigError("edm: image_size must be a positive multiple of 4");
  }
};

inline void to_json(nlohmann::json& j, const EDMConfig& c) {
  j = {{"sigma_min", c.sigma_min}, {"sigma_max", c.sigma_max},   {"rho", c.rho},
       {"p_mean", c.p_mean},       {"p_std", c.p_std},           {"sigma_data", c.sigma_data},
       {"image_size", c.image_size}};
}
inline void from_json(const nlohmann::json& j, EDMConfig& c) {
  EDMConfig d;
  c.sigma_min = j.value("sigma_min", d.sigma_min);
  c.sigma_max = j.value("sigma_max", d.sigma_max);
  c.rho = j.value("rho", d.rho);
  c.p_mean = j.value("p_mean", d.p_mean);
  c.p_std = j.value("p_std", d.p_std);
  c.sigma_data = j.value("sigma_data", d.sigma_data);
  c.image_size = j.value("image_size", d.image_size);
}

// Preconditioning coefficients.
inline double c_skip(double s, double sd) { return sd * sd / (s * s + sd * sd); }
inline double c_out(double s, double sd) { return s * sd / std::sqrt(s * s + sd * sd); }
inline double c_in(double s, double sd) { return 1.0 / std::sqrt(s * s + sd * sd); }
inline double c_noise(double s) { return std::log(s) / 4.0; }

/// lambda(sigma) = (sigma^2 + sd^2) / (sigma sd)^2, the reciprocal of c_out^2.
inline double loss_weight(double sigma, double sigma_data) {
  return (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma * sigma_data * sigma_data);
}

/// log sigma ~ N(p_mean, p_std^2).
inline double sample_sigma(const EDMConfig& cfg, Rng& rng) { return std::exp(cfg.p_mean + cfg.p_std * rng.normal()); }

inline Eigen::MatrixXd corrupt(const Eigen::MatrixXd& c_gt, double sigma, const Eigen::MatrixXd& eps) {
  if (c_gt.rows() != eps.rows() || c_gt.cols() != eps.cols())
    throw DimensionError("corrupt: target and noise shapes differ");
  return c_gt + sigma * eps;
}

inline Eigen::MatrixXd standard_normal(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd e(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) e(i, j) = rng.normal();
  return e;
}

struct TrainingExample {
  std::string pair_id;
  Eigen::MatrixXd c_init;  // condition, already scaled
  Eigen::MatrixXd c_gt;    // target, already scaled
};

/// Maps between functional-map values and network intensities: x = C / factor.
struct DataScale {
  double s_data = 1.0;
  double sigma_data = 0.5;

  double factor() const { return s_data / sigma_data; }
  Eigen::MatrixXd scale(const Eigen::MatrixXd& c) const { return c / factor(); }
  Eigen::MatrixXd unscale(const Eigen::MatrixXd& x) const { return x * factor(); }
};

/// Standard deviation over all target entries of the (unscaled) examples.
inline DataScale dataset_scale(const std::vector<TrainingExample>& examples, double sigma_data) {
  if (examples.empty()) throw EmptyDatasetError("dataset_scale: no training examples");
  double sum = 0.0, count = 0.0;
  for (const auto& e : examples) {
    sum += e.c_gt.sum();
    count += static_cast<double>(e.c_gt.size());
  }
  const double mean = sum / count;
  double var = 0.0;
  for (const auto& e : examples) var += (e.c_gt.array() - mean).square().sum();
  const double sd = std::sqrt(var / count);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))) || !std::isfinite(sd))
    throw ScaleDegenerateError("dataset_scale: target entries have zero spread");
  return {sd, sigma_data};
}

inline std::vector<TrainingExample> apply_scale(std::vector<TrainingExample> examples, const DataScale& s) {
  for (auto& e : examples) {
    if (e.c_gt.rows() != e.c_gt.cols() || e.c_init.rows() != e.c_gt.rows() || e.c_init.cols() != e.c_gt.cols())
      throw DimensionError("training example " + e.pair_id + ": maps must be square and equal-sized");
    if (!e.c_gt.allFinite() || !e.c_init.allFinite())
      throw NonFiniteError("training example " + e.pair_id + ": non-finite entries");
    e.c_gt = s.scale(e.c_gt);
    e.c_init = s.scale(e.c_init);
  }
  return examples;
}

/// A square crop of side p at (row0, col0) of a full map of side `full`.
struct PatchSample {
  int row0 = 0, col0 = 0, full = 0;
  double sigma = 1.0;
  Eigen::MatrixXd noisy, cond, target;

  int size() const { return static_cast<int>(noisy.rows()); }
};

/// Global pixel position mapped linearly to [-1, 1].
inline double coord(int global, int full) { return full > 1 ? 2.0 * global / (full - 1) - 1.0 : 0.0; }

/// Patch side drawn as full, full/2, full/4 with the given probabilities.
inline int draw_resolution(int full, const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return full >> i;
  }
  return full >> (probs.size() - 1);
}

inline PatchSample sample_patch(const TrainingExample& ex, double sigma, int p, Rng& rng) {
  const int full = static_cast<int>(ex.c_gt.rows());
  if (p < 1 || p > full) throw ShapeError("sample_patch: patch size " + std::to_string(p));
  PatchSample s;
  s.full = full;
  s.row0 = static_cast<int>(rng.below(full - p + 1));
  s.col0 = static_cast<int>(rng.below(full - p + 1));
  s.sigma = sigma;
  s.target = ex.c_gt.block(s.row0, s.col0, p, p);
  s.cond = ex.c_init.block(s.row0, s.col0, p, p);
  s.noisy = corrupt(s.target, sigma, standard_normal(p, p, rng));
  return s;
}

/// Network input channels for one sample: c_in * noisy, cond, row and column coordinates.
template <typename T>
void fill_input(nn::Tensor<T>& x, int i, const Eigen::MatrixXd& noisy, const Eigen::MatrixXd& cond, int row0,
                int col0, int full, double cin) {
  const int p = static_cast<int>(noisy.rows());
  for (int u = 0; u < p; ++u)
    for (int v = 0; v < p; ++v) {
      x.at(i, 0, u, v) = static_cast<T>(cin * noisy(u, v));
      x.at(i, 1, u, v) = static_cast<T>(cond(u, v));
      x.at(i, 2, u, v) = static_cast<T>(coord(row0 + u, full));
      x.at(i, 3, u, v) = static_cast<T>(coord(col0 + v, full));
    }
}

/// D(x; sigma) = c_skip x + c_out F(c_in x, cond, coords, c_noise).
template <typename T>
Eigen::MatrixXd denoise(nn::UNet<T>& net, const Eigen::MatrixXd& noisy, const Eigen::MatrixXd& cond, int row0,
                        int col0, int full, double sigma, double sigma_data) {
  const int p = static_cast<int>(noisy.rows());
  if (noisy.cols() != p || cond.rows() != p || cond.cols() != p)
    throw ShapeError("denoise: noisy and condition must be equal square matrices");
  if (!(sigma > 0)) throw ValidationError("denoise: sigma must be positive");
  nn::Tensor<T> x(1, 4, p, p);
  fill_input(x, 0, noisy, cond, row0, col0, full, c_in(sigma, sigma_data));
  const nn::Tensor<T> f = net.forward(x, {static_cast<T>(c_noise(sigma))}, false);
  Eigen::MatrixXd out(p, p);
  const double cs = c_skip(sigma, sigma_data), co = c_out(sigma, sigma_data);
  for (int u = 0; u < p; ++u)
    for (int v = 0; v < p; ++v) out(u, v) = cs * noisy(u, v) + co * static_cast<double>(f.at(0, 0, u, v));
  return out;
}

/// Full-map denoise (offset 0, coordinates spanning [-1, 1]).
template <typename T>
Eigen::MatrixXd denoise(nn::UNet<T>& net, const Eigen::MatrixXd& noisy, const Eigen::MatrixXd& cond, double sigma,
                        double sigma_data) {
  return denoise(net, noisy, cond, 0, 0, static_cast<int>(noisy.rows()), sigma, sigma_data);
}

}  // namespace fridu::edm
