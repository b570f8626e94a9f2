#pragma once

#include <cmath>
#include <memory>
#include <json.hpp>
#include <string>
#include <vector>

#include "fridu/diffusion/layers.hpp"

namespace fridu::nn {

struct UNetConfig {
  int in_channels = 4;  // noisy, condition, row coordinate, column coordinate
  int out_channels = 1;
  int model_channels = 16;
  std::vector<int> channel_mult = {2, 4};
  int num_blocks = 2;
  double channel_mult_emb = 0.1;

  int emb_channels() const {
    return std::max(1, static_cast<int>(std::lround(model_channels * channel_mult_emb)));
  }
  /// Spatial sizes must be divisible by this.
  int size_multiple() const { return 1 << (static_cast<int>(channel_mult.size()) - 1); }

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || model_channels < 4 || model_channels % 4 != 0)
      throw ConfigError("unet: model_channels must be a positive multiple of 4");
    if (channel_mult.empty() || num_blocks < 1) throw ConfigError("unet: empty channel_mult or num_blocks < 1");
    if (channel_mult_emb <= 0) throw ConfigError("unet: channel_mult_emb must be positive");
  }
};

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"in_channels", c.in_channels},       {"out_channels", c.out_channels}, {"model_channels", c.model_channels},
       {"channel_mult", c.channel_mult},     {"num_blocks", c.num_blocks},     {"channel_mult_emb", c.channel_mult_emb}};
}
inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  UNetConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.out_channels = j.value("out_channels", d.out_channels);
  c.model_channels = j.value("model_channels", d.model_channels);
  c.channel_mult = j.value("channel_mult", d.channel_mult);
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.channel_mult_emb = j.value("channel_mult_emb", d.channel_mult_emb);
}

/// Pre-activation residual block with additive noise-embedding bias and
/// optional 2x down/up resampling on both paths.
template <typename T>
class ResBlock {
 public:
  enum class Resample { none, down, up };

  ResBlock(ParamStore<T>& ps, const std::string& name, int cin, int cout, int emb, Resample rs)
      : rs_(rs),
        norm0_(ps, name + ".norm0", cin),
        conv0_(ps, name + ".conv0", cin, cout, 3),
        affine_(ps, name + ".affine", emb, cout),
        norm1_(ps, name + ".norm1", cout),
        conv1_(ps, name + ".conv1", cout, cout, 3),
        has_skip_(cin != cout || rs != Resample::none) {
    if (has_skip_) skip_ = Conv2d<T>(ps, name + ".skip", cin, cout, 1);
  }

  void init(Rng& rng) {
    conv0_.init(rng, 1.0);
    affine_.init(rng, 1.0);
    conv1_.init(rng, 1e-5);
    if (has_skip_) skip_.init(rng, 1.0);
  }

  Tensor<T> forward(const Tensor<T>& x, const RowMat<T>& emb, bool keep) {
    Tensor<T> a = act0_.forward(norm0_.forward(x, keep), keep);
    Tensor<T> h = conv0_.forward(resample(a), keep);
    const RowMat<T> e = affine_.forward(emb, keep);
    for (int i = 0; i < h.n; ++i)
      for (int ch = 0; ch < h.c; ++ch) {
        T* d = h.channel(i, ch);
        for (size_t j = 0; j < h.plane(); ++j) d[j] += e(i, ch);
      }
    Tensor<T> out = conv1_.forward(act1_.forward(norm1_.forward(h, keep), keep), keep);
    Tensor<T> s = resample(x);
    if (has_skip_) s = skip_.forward(s, keep);
    const T scale = T(1.0 / std::sqrt(2.0));
    for (size_t j = 0; j < out.size(); ++j) out.data[j] = (out.data[j] + s.data[j]) * scale;
    return out;
  }

  /// Returns the input gradient; the embedding gradient is added to demb.
  Tensor<T> backward(const Tensor<T>& dy, RowMat<T>& demb) {
    const T scale = T(1.0 / std::sqrt(2.0));
    Tensor<T> g = dy;
    for (auto& v : g.data) v *= scale;
    Tensor<T> dh = norm1_.backward(act1_.backward(conv1_.backward(g)));
    RowMat<T> de(dh.n, dh.c);
    for (int i = 0; i < dh.n; ++i)
      for (int ch = 0; ch < dh.c; ++ch) {
        const T* d = dh.channel(i, ch);
        double acc = 0.0;
        for (size_t j = 0; j < dh.plane(); ++j) acc += d[j];
        de(i, ch) = static_cast<T>(acc);
      }
    demb += affine_.backward(de);
    Tensor<T> dx = norm0_.backward(act0_.backward(resample_backward(conv0_.backward(dh))));
    Tensor<T> ds = has_skip_ ? skip_.backward(g) : g;
    ds = resample_backward(ds);
    for (size_t j = 0; j < dx.size(); ++j) dx.data[j] += ds.data[j];
    return dx;
  }

 private:
  Tensor<T> resample(const Tensor<T>& x) const {
    if (rs_ == Resample::down) return avg_pool2(x);
    if (rs_ == Resample::up) return upsample2(x);
    return x;
  }
  Tensor<T> resample_backward(const Tensor<T>& g) const {
    if (rs_ == Resample::down) return avg_pool2_backward(g);
    if (rs_ == Resample::up) return upsample2_backward(g);
    return g;
  }

  Resample rs_;
  GroupNorm<T> norm0_;
  SiLU<T> act0_;
  Conv2d<T> conv0_;
  Linear<T> affine_;
  GroupNorm<T> norm1_;
  SiLU<T> act1_;
  Conv2d<T> conv1_;
  bool has_skip_;
  Conv2d<T> skip_;
};

/// Encoder/decoder U-Net with skip concatenation and a sinusoidal embedding
/// of the scalar noise input. Templated on the scalar so gradients can be
/// checked in double while training runs in float.
template <typename T>
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    build();
    Rng rng(seed);
    init(rng);
  }

  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const UNetConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }

  /// Zeroes the output convolution, so F == 0.
  void zero_output_head() {
    for (const auto& e : ps_.entries)
      if (e.name.rfind("out.", 0) == 0) std::fill(ps_.p(e.offset), ps_.p(e.offset) + e.size, T(0));
  }

  /// x: (n, in_channels, h, w); noise: one scalar per sample.
  Tensor<T> forward(const Tensor<T>& x, const std::vector<T>& noise, bool keep = false) {
    if (x.c != cfg_.in_channels) throw ShapeError("unet: expected " + std::to_string(cfg_.in_channels) + " channels");
    if (x.h % cfg_.size_multiple() || x.w % cfg_.size_multiple() || x.h == 0 || x.w == 0)
      throw ShapeError("unet: spatial size not divisible by " + std::to_string(cfg_.size_multiple()));
    if (static_cast<int>(noise.size()) != x.n) throw ShapeError("unet: one noise label per sample");

    RowMat<T> pe = positional(noise);
    pe_pre0_ = map0_.forward(pe, keep);
    RowMat<T> h0 = silu(pe_pre0_);
    emb_pre1_ = map1_.forward(h0, keep);
    const RowMat<T> emb = silu(emb_pre1_);

    std::vector<Tensor<T>> skips;
    Tensor<T> h = conv_in_.forward(x, keep);
    skips.push_back(h);
    for (auto& b : enc_) {
      h = b->forward(h, emb, keep);
      skips.push_back(h);
    }
    for (auto& b : mid_) h = b->forward(h, emb, keep);
    skip_channels_.clear();
    for (size_t i = 0; i < dec_.size(); ++i) {
      if (dec_concat_[i]) {
        const Tensor<T>& s = skips.back();
        skip_channels_.push_back(h.c);
        h = concat_channels(h, s);
        skips.pop_back();
      } else {
        skip_channels_.push_back(-1);
      }
      h = dec_[i]->forward(h, emb, keep);
    }
    h = out_act_.forward(out_norm_.forward(h, keep), keep);
    return out_conv_.forward(h, keep);
  }

  /// Backpropagates dy through the last forward(keep=true); accumulates into params().grad.
  Tensor<T> backward(const Tensor<T>& dy) {
    RowMat<T> demb = RowMat<T>::Zero(emb_pre1_.rows(), emb_pre1_.cols());
    Tensor<T> g = out_norm_.backward(out_act_.backward(out_conv_.backward(dy)));
    std::vector<Tensor<T>> dskips;  // ends up in encoder output order
    for (size_t i = dec_.size(); i-- > 0;) {
      g = dec_[i]->backward(g, demb);
      if (dec_concat_[i]) {
        Tensor<T> gh, gs;
        split_channels(g, skip_channels_[i], gh, gs);
        g = std::move(gh);
        dskips.push_back(std::move(gs));
      }
    }
    for (size_t i = mid_.size(); i-- > 0;) g = mid_[i]->backward(g, demb);
    for (size_t i = enc_.size(); i-- > 0;) {
      add_into(g, dskips[i + 1]);
      g = enc_[i]->backward(g, demb);
    }
    add_into(g, dskips[0]);
    Tensor<T> dx = conv_in_.backward(g);
    const RowMat<T> d1 = silu_backward(emb_pre1_, demb);
    const RowMat<T> dh0 = map1_.backward(d1);
    map0_.backward(silu_backward(pe_pre0_, dh0));
    return dx;
  }

 private:
  static void add_into(Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "unet skip gradient");
    for (size_t j = 0; j < a.size(); ++j) a.data[j] += b.data[j];
  }

  RowMat<T> positional(const std::vector<T>& noise) const {
    const int half = cfg_.model_channels / 2;
    RowMat<T> pe(static_cast<int>(noise.size()), 2 * half);
    for (size_t i = 0; i < noise.size(); ++i)
      for (int f = 0; f < half; ++f) {
        const double freq = std::pow(1.0 / 10000.0, half > 1 ? static_cast<double>(f) / (half - 1) : 0.0);
        const double a = static_cast<double>(noise[i]) * freq;
        pe(static_cast<int>(i), f) = static_cast<T>(std::cos(a));
        pe(static_cast<int>(i), half + f) = static_cast<T>(std::sin(a));
      }
    return pe;
  }

  void build() {
    using R = typename ResBlock<T>::Resample;
    const int mc = cfg_.model_channels, E = cfg_.emb_channels();
    map0_ = Linear<T>(ps_, "map0", mc, E);
    map1_ = Linear<T>(ps_, "map1", E, E);
    conv_in_ = Conv2d<T>(ps_, "enc.conv", cfg_.in_channels, mc, 3);

    std::vector<int> skip_ch = {mc};
    int cur = mc;
    for (size_t level = 0; level < cfg_.channel_mult.size(); ++level) {
      const int cout = mc * cfg_.channel_mult[level];
      const std::string p = "enc." + std::to_string(level);
      if (level > 0) {
        enc_.push_back(std::make_unique<ResBlock<T>>(ps_, p + ".down", cur, cur, E, R::down));
        skip_ch.push_back(cur);
      }
      for (int b = 0; b < cfg_.num_blocks; ++b) {
        enc_.push_back(std::make_unique<ResBlock<T>>(ps_, p + ".block" + std::to_string(b), cur, cout, E, R::none));
        cur = cout;
        skip_ch.push_back(cur);
      }
    }
    mid_.push_back(std::make_unique<ResBlock<T>>(ps_, "mid", cur, cur, E, R::none));
    for (size_t level = cfg_.channel_mult.size(); level-- > 0;) {
      const int cout = mc * cfg_.channel_mult[level];
      const std::string p = "dec." + std::to_string(level);
      if (level + 1 < cfg_.channel_mult.size()) {
        dec_.push_back(std::make_unique<ResBlock<T>>(ps_, p + ".up", cur, cur, E, R::up));
        dec_concat_.push_back(false);
      }
      for (int b = 0; b <= cfg_.num_blocks; ++b) {
        const int cin = cur + skip_ch.back();
        skip_ch.pop_back();
        dec_.push_back(std::make_unique<ResBlock<T>>(ps_, p + ".block" + std::to_string(b), cin, cout, E, R::none));
        dec_concat_.push_back(true);
        cur = cout;
      }
    }
    out_norm_ = GroupNorm<T>(ps_, "out.norm", cur);
    out_conv_ = Conv2d<T>(ps_, "out.conv", cur, cfg_.out_channels, 3);
  }

  void init(Rng& rng) {
    map0_.init(rng, 1.0);
    map1_.init(rng, 1.0);
    conv_in_.init(rng, 1.0);
    for (auto& b : enc_) b->init(rng);
    for (auto& b : mid_) b->init(rng);
    for (auto& b : dec_) b->init(rng);
    out_conv_.init(rng, 1e-5);
  }

  UNetConfig cfg_;
  ParamStore<T> ps_;
  Linear<T> map0_, map1_;
  Conv2d<T> conv_in_;
  std::vector<std::unique_ptr<ResBlock<T>>> enc_, mid_, dec_;
  std::vector<bool> dec_concat_;
  std::vector<int> skip_channels_;
  GroupNorm<T> out_norm_;
  SiLU<T> out_act_;
  Conv2d<T> out_conv_;
  RowMat<T> pe_pre0_, emb_pre1_;
};

}  // namespace fridu::nn
