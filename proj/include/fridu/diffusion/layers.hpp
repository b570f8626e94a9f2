#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fridu/core/rng.hpp"
#include "fridu/diffusion/tensor.hpp"

namespace fridu::nn {

/// Flat parameter storage. Layers keep offsets, so the buffers can be
/// copied, averaged, or serialized as one contiguous block.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    size_t offset;
    size_t size;
  };

  std::vector<T> value;
  std::vector<T> grad;
  std::vector<Entry> entries;

  size_t add(const std::string& name, size_t size) {
    const size_t off = value.size();
    entries.push_back({name, off, size});
    value.resize(off + size, T(0));
    grad.resize(off + size, T(0));
    return off;
  }

  T* p(size_t off) { return value.data() + off; }
  const T* p(size_t off) const { return value.data() + off; }
  T* g(size_t off) { return grad.data() + off; }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
  size_t size() const { return value.size(); }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

inline void uniform_fill(float* dst, size_t n, double bound, Rng& rng) {
  for (size_t i = 0; i < n; ++i) dst[i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
}
inline void uniform_fill(double* dst, size_t n, double bound, Rng& rng) {
  for (size_t i = 0; i < n; ++i) dst[i] = (2.0 * rng.uniform() - 1.0) * bound;
}

/// 2-D convolution, kernel 1 or 3, stride 1, zero padding k/2.
///
/// The 3x3 case runs nine GEMMs over a zero-padded, flattened copy of the
/// input: a spatial tap (dy, dx) is a constant offset in the flattened
/// padded plane, so each tap is a strided view rather than an im2col copy.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k)
      : ps_(&ps), cin_(cin), cout_(cout), k_(k) {
    if (k != 1 && k != 3) throw ValidationError("Conv2d: kernel must be 1 or 3");
    w_ = ps.add(name + ".weight", static_cast<size_t>(cout) * cin * k * k);
    b_ = ps.add(name + ".bias", cout);
  }

  /// Xavier-uniform weights scaled by gain; zero bias.
  void init(Rng& rng, double gain) {
    const double fan_in = cin_ * k_ * k_, fan_out = cout_ * k_ * k_;
    uniform_fill(ps_->p(w_), static_cast<size_t>(cout_) * cin_ * k_ * k_, gain * std::sqrt(6.0 / (fan_in + fan_out)),
                 rng);
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

  Tensor<T> forward(const Tensor<T>& x, bool keep) {
    if (x.c != cin_) throw ShapeError("Conv2d: expected " + std::to_string(cin_) + " channels, got " + x.shape_str());
    Tensor<T> out(x.n, cout_, x.h, x.w);
    const int hw = static_cast<int>(x.plane());
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(ps_->p(b_), cout_);
    if (k_ == 1) {
      if (keep) x_ = x;
      ConstRowMap<T> W(ps_->p(w_), cout_, cin_);
      for (int i = 0; i < x.n; ++i) {
        RowMap<T> o(out.sample(i), cout_, hw);
        o.noalias() = W * ConstRowMap<T>(x.sample(i), cin_, hw);
        o.colwise() += bias;
      }
      return out;
    }
    set_geometry(x);
    pad(x);
    split_taps();
    RowMat<T> acc(cout_, L_);
    for (int i = 0; i < x.n; ++i) {
      acc.setZero();
      for (int t = 0; t < 9; ++t) acc.noalias() += taps_[t] * padded_view(i, t);
      for (int c = 0; c < cout_; ++c)
        for (int y = 0; y < h_; ++y) {
          const T* s = acc.row(c).data() + (y + 1) * wp_ + 1;
          T* d = out.channel(i, c) + y * w_in_;
          for (int xx = 0; xx < w_in_; ++xx) d[xx] = s[xx] + bias[c];
        }
    }
    if (!keep) xp_.clear();
    return out;
  }

  /// Accumulates parameter gradients; returns the input gradient.
  Tensor<T> backward(const Tensor<T>& dy) {
    RowMap<T> dW(ps_->g(w_), cout_, cin_ * k_ * k_);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(ps_->g(b_), cout_);
    const int hw = static_cast<int>(dy.plane());
    if (k_ == 1) {
      ConstRowMap<T> W(ps_->p(w_), cout_, cin_);
      Tensor<T> dx = zeros_like(x_);
      for (int i = 0; i < x_.n; ++i) {
        ConstRowMap<T> g(dy.sample(i), cout_, hw);
        db += g.rowwise().sum();
        dW.noalias() += g * ConstRowMap<T>(x_.sample(i), cin_, hw).transpose();
        RowMap<T>(dx.sample(i), cin_, hw).noalias() = W.transpose() * g;
      }
      return dx;
    }
    split_taps();
    Tensor<T> dx(n_, cin_, h_, w_in_);
    RowMat<T> g(cout_, L_), dtap(cout_, cin_);
    RowMat<T> dxp(cin_, row_len_);
    for (int i = 0; i < n_; ++i) {
      g.setZero();
      for (int c = 0; c < cout_; ++c)
        for (int y = 0; y < h_; ++y)
          std::copy(dy.channel(i, c) + y * w_in_, dy.channel(i, c) + (y + 1) * w_in_,
                    g.row(c).data() + (y + 1) * wp_ + 1);
      db += g.rowwise().sum();
      dxp.setZero();
      for (int t = 0; t < 9; ++t) {
        dtap.noalias() = g * padded_view(i, t).transpose();
        for (int c = 0; c < cin_; ++c) dW.col(c * 9 + t) += dtap.col(c);
        Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> dst(dxp.data() + margin_ + offset(t), cin_, L_,
                                                           Eigen::OuterStride<>(row_len_));
        dst.noalias() += taps_[t].transpose() * g;
      }
      for (int c = 0; c < cin_; ++c)
        for (int y = 0; y < h_; ++y) {
          const T* s = dxp.row(c).data() + margin_ + (y + 1) * wp_ + 1;
          std::copy(s, s + w_in_, dx.channel(i, c) + y * w_in_);
        }
    }
    return dx;
  }

 private:
  void set_geometry(const Tensor<T>& x) {
    n_ = x.n;
    h_ = x.h;
    w_in_ = x.w;
    wp_ = x.w + 2;
    L_ = (x.h + 2) * wp_;
    margin_ = wp_ + 1;
    row_len_ = L_ + 2 * margin_;
  }

  int offset(int t) const { return (t / 3 - 1) * wp_ + (t % 3 - 1); }

  Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> padded_view(int i, int t) const {
    return {xp_.data() + static_cast<size_t>(i) * cin_ * row_len_ + margin_ + offset(t), cin_, L_,
            Eigen::OuterStride<>(row_len_)};
  }

  void pad(const Tensor<T>& x) {
    xp_.assign(static_cast<size_t>(x.n) * cin_ * row_len_, T(0));
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < cin_; ++c) {
        T* base = xp_.data() + (static_cast<size_t>(i) * cin_ + c) * row_len_ + margin_;
        for (int y = 0; y < h_; ++y)
          std::copy(x.channel(i, c) + y * w_in_, x.channel(i, c) + (y + 1) * w_in_, base + (y + 1) * wp_ + 1);
      }
  }

  void split_taps() {
    ConstRowMap<T> W(ps_->p(w_), cout_, cin_ * 9);
    taps_.resize(9);
    for (int t = 0; t < 9; ++t) {
      taps_[t].resize(cout_, cin_);
      for (int c = 0; c < cin_; ++c) taps_[t].col(c) = W.col(c * 9 + t);
    }
  }

  ParamStore<T>* ps_ = nullptr;
  int cin_ = 0, cout_ = 0, k_ = 1;
  size_t w_ = 0, b_ = 0;
  Tensor<T> x_;  // 1x1 input
  AlignedVector<T> xp_;  // padded 3x3 input
  std::vector<RowMat<T>> taps_;
  int n_ = 0, h_ = 0, w_in_ = 0, wp_ = 0, L_ = 0, margin_ = 0, row_len_ = 0;
};

/// Fully connected layer on (n, in) row vectors.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int in, int out) : ps_(&ps), in_(in), out_(out) {
    w_ = ps.add(name + ".weight", static_cast<size_t>(out) * in);
    b_ = ps.add(name + ".bias", out);
  }

  void init(Rng& rng, double gain) {
    uniform_fill(ps_->p(w_), static_cast<size_t>(out_) * in_, gain * std::sqrt(6.0 / (in_ + out_)), rng);
  }

  RowMat<T> forward(const RowMat<T>& x, bool keep) {
    if (keep) x_ = x;
    RowMat<T> y = x * ConstRowMap<T>(ps_->p(w_), out_, in_).transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(ps_->p(b_), out_);
    return y;
  }

  RowMat<T> backward(const RowMat<T>& dy) {
    RowMap<T>(ps_->g(w_), out_, in_).noalias() += dy.transpose() * x_;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(ps_->g(b_), out_) += dy.colwise().sum();
    return dy * ConstRowMap<T>(ps_->p(w_), out_, in_);
  }

 private:
  ParamStore<T>* ps_ = nullptr;
  int in_ = 0, out_ = 0;
  size_t w_ = 0, b_ = 0;
  RowMat<T> x_;
};

/// Group normalization with per-channel affine; groups = min(32, C/4).
template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamStore<T>& ps, const std::string& name, int channels, double eps = 1e-5)
      : ps_(&ps), c_(channels), g_(std::max(1, std::min(32, channels / 4))), eps_(eps) {
    if (c_ % g_ != 0) throw ValidationError("GroupNorm: channels not divisible by groups");
    gamma_ = ps.add(name + ".weight", c_);
    beta_ = ps.add(name + ".bias", c_);
    std::fill(ps.p(gamma_), ps.p(gamma_) + c_, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool keep) {
    if (x.c != c_) throw ShapeError("GroupNorm: channel mismatch " + x.shape_str());
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    Tensor<T> y = zeros_like(x);
    if (keep) {
      xhat_ = zeros_like(x);
      rstd_.assign(static_cast<size_t>(x.n) * g_, T(0));
    }
    const int cpg = c_ / g_;
    const Eigen::Index plane = static_cast<Eigen::Index>(x.plane()), m = cpg * plane;
    const T* gamma = ps_->p(gamma_);
    const T* beta = ps_->p(beta_);
    for (int i = 0; i < x.n; ++i)
      for (int gi = 0; gi < g_; ++gi) {
        Eigen::Map<const Arr> s(x.channel(i, gi * cpg), m);
        const T mu = s.sum() / static_cast<T>(m);
        const T var = (s - mu).square().sum() / static_cast<T>(m);
        const T r = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps_));
        if (keep) {
          rstd_[i * g_ + gi] = r;
          Eigen::Map<Arr>(xhat_.channel(i, gi * cpg), m) = (s - mu) * r;
        }
        for (int ch = gi * cpg; ch < (gi + 1) * cpg; ++ch) {
          Eigen::Map<const Arr> sc(x.channel(i, ch), plane);
          Eigen::Map<Arr>(y.channel(i, ch), plane) = (sc - mu) * (r * gamma[ch]) + beta[ch];
        }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const Tensor<T>& xh = xhat_;
    Tensor<T> dx = zeros_like(xh);
    const T* gamma = ps_->p(gamma_);
    T* dgamma = ps_->g(gamma_);
    T* dbeta = ps_->g(beta_);
    const int cpg = c_ / g_;
    const Eigen::Index plane = static_cast<Eigen::Index>(xh.plane());
    const double m = static_cast<double>(cpg * plane);
    for (int i = 0; i < xh.n; ++i)
      for (int gi = 0; gi < g_; ++gi) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (int ch = gi * cpg; ch < (gi + 1) * cpg; ++ch) {
          Eigen::Map<const Arr> g(dy.channel(i, ch), plane);
          Eigen::Map<const Arr> s(xh.channel(i, ch), plane);
          const double dg = (g * s).sum();
          const double dbsum = g.sum();
          dgamma[ch] += static_cast<T>(dg);
          dbeta[ch] += static_cast<T>(dbsum);
          sum_d += gamma[ch] * dbsum;
          sum_dx += gamma[ch] * dg;
        }
        const T r = rstd_[i * g_ + gi];
        const T a = static_cast<T>(sum_d / m), b = static_cast<T>(sum_dx / m);
        for (int ch = gi * cpg; ch < (gi + 1) * cpg; ++ch) {
          Eigen::Map<const Arr> g(dy.channel(i, ch), plane);
          Eigen::Map<const Arr> s(xh.channel(i, ch), plane);
          Eigen::Map<Arr>(dx.channel(i, ch), plane) = r * (gamma[ch] * g - a - s * b);
        }
      }
    return dx;
  }

 private:
  ParamStore<T>* ps_ = nullptr;
  int c_ = 0, g_ = 1;
  double eps_ = 1e-5;
  size_t gamma_ = 0, beta_ = 0;
  Tensor<T> xhat_;
  std::vector<T> rstd_;
};

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
class SiLU {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool keep) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    if (keep) x_ = x;
    Tensor<T> y = zeros_like(x);
    const Eigen::Index n = static_cast<Eigen::Index>(x.size());
    Eigen::Map<const Arr> a(x.data.data(), n);
    Eigen::Map<Arr>(y.data.data(), n) = a / (T(1) + (-a).exp());
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    Tensor<T> dx = zeros_like(x_);
    const Eigen::Index n = static_cast<Eigen::Index>(x_.size());
    Eigen::Map<const Arr> a(x_.data.data(), n), g(dy.data.data(), n);
    const Arr s = T(1) / (T(1) + (-a).exp());
    Eigen::Map<Arr>(dx.data.data(), n) = g * s * (T(1) + a * (T(1) - s));
    return dx;
  }

 private:
  Tensor<T> x_;
};

template <typename T>
RowMat<T> silu(const RowMat<T>& x) {
  return x.unaryExpr([](T v) { return v * sigmoid(v); });
}
template <typename T>
RowMat<T> silu_backward(const RowMat<T>& x, const RowMat<T>& dy) {
  RowMat<T> dx(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const T s = sigmoid(x.data()[j]);
    dx.data()[j] = dy.data()[j] * s * (T(1) + x.data()[j] * (T(1) - s));
  }
  return dx;
}

/// 2x2 box average, stride 2. Requires even spatial size.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  if (x.h % 2 || x.w % 2) throw ShapeError("avg_pool2: odd spatial size " + x.shape_str());
  Tensor<T> y(x.n, x.c, x.h / 2, x.w / 2);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx)
          y.at(i, ch, yy, xx) = T(0.25) * (x.at(i, ch, 2 * yy, 2 * xx) + x.at(i, ch, 2 * yy, 2 * xx + 1) +
                                           x.at(i, ch, 2 * yy + 1, 2 * xx) + x.at(i, ch, 2 * yy + 1, 2 * xx + 1));
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n, dy.c, dy.h * 2, dy.w * 2);
  for (int i = 0; i < dx.n; ++i)
    for (int ch = 0; ch < dx.c; ++ch)
      for (int yy = 0; yy < dx.h; ++yy)
        for (int xx = 0; xx < dx.w; ++xx) dx.at(i, ch, yy, xx) = T(0.25) * dy.at(i, ch, yy / 2, xx / 2);
  return dx;
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.n, x.c, x.h * 2, x.w * 2);
  for (int i = 0; i < y.n; ++i)
    for (int ch = 0; ch < y.c; ++ch)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) y.at(i, ch, yy, xx) = x.at(i, ch, yy / 2, xx / 2);
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) dx.at(i, ch, yy / 2, xx / 2) += dy.at(i, ch, yy, xx);
  return dx;
}

}  // namespace fridu::nn
