#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "centrifuge/nn/vol2col.hpp"
#include "centrifuge/rng.hpp"
#include "centrifuge/tensor.hpp"

// Layers over N x C x D x H x W float tensors. Each layer's backward takes the
// same input its forward saw; layers that need more than that (normalization,
// rectifier) keep it from their last forward call.

namespace centrifuge::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct Param {
  std::string name;
  TensorF value;
  TensorF grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0f); }
};

/// Non-trainable state saved with the parameters (normalization statistics).
struct Buffer {
  std::string name;
  TensorF value;
};

inline std::array<int, 3> spatial(const TensorF& x) { return {x.dim(2), x.dim(3), x.dim(4)}; }

inline void fill_normal(TensorF& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<float>(dist(rng));
}

// ---------------------------------------------------------------------------

class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, int in_ch, int out_ch, std::array<int, 3> kernel, std::array<int, 3> stride,
         std::array<int, 3> pad, bool bias, Rng& rng, double gain = 2.0)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_(name + ".weight", {out_ch, in_ch * kernel[0] * kernel[1] * kernel[2]}),
        bias_(name + ".bias", {bias ? out_ch : 0}) {
    const double fan_in = static_cast<double>(in_ch) * kernel[0] * kernel[1] * kernel[2];
    fill_normal(weight_.value, std::sqrt(gain / fan_in), rng);
  }

  ConvGeometry geometry(const std::array<int, 3>& in) const {
    return ConvGeometry::make(in_ch_, in, kernel_, stride_, pad_);
  }

  bool pointwise() const {
    return kernel_ == std::array<int, 3>{1, 1, 1} && stride_ == std::array<int, 3>{1, 1, 1} &&
           pad_ == std::array<int, 3>{0, 0, 0};
  }

  TensorF forward(const TensorF& x) const {
    check_input(x);
    const auto g = geometry(spatial(x));
    const int N = x.dim(0), P = g.cols(), R = g.rows();
    TensorF y({N, out_ch_, g.out[0], g.out[1], g.out[2]});
    std::vector<float> col(pointwise() ? 0 : static_cast<std::size_t>(R) * P);
    ConstMatMap w(weight_.value.data(), out_ch_, R);
    for (int n = 0; n < N; ++n) {
      const float* xn = x.data() + n * x.stride0();
      if (!pointwise()) vol2col(xn, g, col.data());
      ConstMatMap c(pointwise() ? xn : col.data(), R, P);
      MatMap yn(y.data() + n * y.stride0(), out_ch_, P);
      yn.noalias() = w * c;
      if (has_bias_) yn.colwise() += Eigen::Map<const Eigen::VectorXf>(bias_.value.data(), out_ch_);
    }
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx when `input_grad` is set.
  TensorF backward(const TensorF& x, const TensorF& dy, bool input_grad = true) {
    const auto g = geometry(spatial(x));
    const int N = x.dim(0), P = g.cols(), R = g.rows();
    std::vector<float> col(pointwise() ? 0 : static_cast<std::size_t>(R) * P);
    std::vector<float> dcol(pointwise() || !input_grad ? 0 : static_cast<std::size_t>(R) * P);
    TensorF dx;
    if (input_grad) dx.reset(x.shape());
    ConstMatMap w(weight_.value.data(), out_ch_, R);
    MatMap dw(weight_.grad.data(), out_ch_, R);
    for (int n = 0; n < N; ++n) {
      const float* xn = x.data() + n * x.stride0();
      if (!pointwise()) vol2col(xn, g, col.data());
      ConstMatMap c(pointwise() ? xn : col.data(), R, P);
      ConstMatMap dyn(dy.data() + n * dy.stride0(), out_ch_, P);
      dw.noalias() += dyn * c.transpose();
      if (has_bias_) Eigen::Map<Eigen::VectorXf>(bias_.grad.data(), out_ch_) += dyn.rowwise().sum();
      if (!input_grad) continue;
      if (pointwise()) {
        MatMap(dx.data() + n * dx.stride0(), R, P).noalias() = w.transpose() * dyn;
      } else {
        MatMap(dcol.data(), R, P).noalias() = w.transpose() * dyn;
        col2vol(dcol.data(), g, dx.data() + n * dx.stride0());
      }
    }
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int out_channels() const { return out_ch_; }

 private:
  void check_input(const TensorF& x) const {
    if (x.ndim() != 5 || x.dim(1) != in_ch_)
      throw std::invalid_argument("Conv3d(" + weight_.name + "): expected " + std::to_string(in_ch_) +
                                  " input channels, got shape " + shape_string(x.shape()));
  }

  int in_ch_ = 0, out_ch_ = 0;
  std::array<int, 3> kernel_{}, stride_{}, pad_{};
  bool has_bias_ = false;
  Param weight_, bias_;
};

// ---------------------------------------------------------------------------

/// Transposed 3D convolution producing an explicitly requested output extent
/// (the adjoint of a Conv3d that maps that extent onto the input grid).
class ConvTranspose3d {
 public:
  ConvTranspose3d() = default;
  ConvTranspose3d(const std::string& name, int in_ch, int out_ch, std::array<int, 3> kernel,
                  std::array<int, 3> stride, std::array<int, 3> pad, bool bias, Rng& rng)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_(name + ".weight", {in_ch, out_ch * kernel[0] * kernel[1] * kernel[2]}),
        bias_(name + ".bias", {bias ? out_ch : 0}) {
    const double fan_in = static_cast<double>(in_ch) * kernel[0] * kernel[1] * kernel[2] /
                          (static_cast<double>(stride[0]) * stride[1] * stride[2]);
    fill_normal(weight_.value, std::sqrt(2.0 / fan_in), rng);
  }

  ConvGeometry geometry(const std::array<int, 3>& out_extent, const std::array<int, 3>& in_extent) const {
    auto g = ConvGeometry::make(out_ch_, out_extent, kernel_, stride_, pad_);
    if (g.out != in_extent)
      throw std::invalid_argument("ConvTranspose3d(" + weight_.name + "): output extent incompatible with input grid");
    return g;
  }

  TensorF forward(const TensorF& x, const std::array<int, 3>& out_extent) const {
    if (x.ndim() != 5 || x.dim(1) != in_ch_)
      throw std::invalid_argument("ConvTranspose3d(" + weight_.name + "): bad input shape " + shape_string(x.shape()));
    const auto g = geometry(out_extent, spatial(x));
    const int N = x.dim(0), P = g.cols(), R = g.rows();
    TensorF y({N, out_ch_, out_extent[0], out_extent[1], out_extent[2]});
    std::vector<float> col(static_cast<std::size_t>(R) * P);
    ConstMatMap w(weight_.value.data(), in_ch_, R);
    for (int n = 0; n < N; ++n) {
      ConstMatMap xn(x.data() + n * x.stride0(), in_ch_, P);
      MatMap(col.data(), R, P).noalias() = w.transpose() * xn;
      float* yn = y.data() + n * y.stride0();
      col2vol(col.data(), g, yn);
      if (has_bias_) {
        const std::size_t vol = static_cast<std::size_t>(g.in_volume());
        for (int c = 0; c < out_ch_; ++c)
          for (std::size_t i = 0; i < vol; ++i) yn[c * vol + i] += bias_.value[c];
      }
    }
    return y;
  }

  TensorF backward(const TensorF& x, const TensorF& dy, bool input_grad = true) {
    const auto g = geometry(spatial(dy), spatial(x));
    const int N = x.dim(0), P = g.cols(), R = g.rows();
    std::vector<float> dcol(static_cast<std::size_t>(R) * P);
    TensorF dx;
    if (input_grad) dx.reset(x.shape());
    ConstMatMap w(weight_.value.data(), in_ch_, R);
    MatMap dw(weight_.grad.data(), in_ch_, R);
    for (int n = 0; n < N; ++n) {
      const float* dyn = dy.data() + n * dy.stride0();
      vol2col(dyn, g, dcol.data());
      ConstMatMap dc(dcol.data(), R, P);
      ConstMatMap xn(x.data() + n * x.stride0(), in_ch_, P);
      dw.noalias() += xn * dc.transpose();
      if (input_grad) MatMap(dx.data() + n * dx.stride0(), in_ch_, P).noalias() = w * dc;
      if (has_bias_) {
        const std::size_t vol = static_cast<std::size_t>(g.in_volume());
        for (int c = 0; c < out_ch_; ++c) {
          double s = 0;
          for (std::size_t i = 0; i < vol; ++i) s += dyn[c * vol + i];
          bias_.grad[c] += static_cast<float>(s);
        }
      }
    }
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  int in_ch_ = 0, out_ch_ = 0;
  std::array<int, 3> kernel_{}, stride_{}, pad_{};
  bool has_bias_ = false;
  Param weight_, bias_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (N, D, H, W). Eval mode uses the
/// running averages accumulated during training.
class BatchNorm3d {
 public:
  BatchNorm3d() = default;
  BatchNorm3d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels), momentum_(momentum), eps_(eps), gamma_(name + ".gamma", {channels}),
        beta_(name + ".beta", {channels}), running_mean_{name + ".running_mean", TensorF({channels}, 0.0f)},
        running_var_{name + ".running_var", TensorF({channels}, 1.0f)} {
    gamma_.value.fill(1.0f);
  }

  TensorF forward(const TensorF& x, bool training) {
    if (x.ndim() != 5 || x.dim(1) != channels_)
      throw std::invalid_argument("BatchNorm3d(" + gamma_.name + "): bad input shape " + shape_string(x.shape()));
    const int N = x.dim(0), C = channels_;
    const std::size_t vol = x.stride0() / C;
    const double M = static_cast<double>(N) * vol;
    TensorF y(x.shape());
    trained_ = training;
    if (training) {
      xhat_.reset(x.shape());
      inv_std_.assign(C, 0.0f);
    }
    for (int c = 0; c < C; ++c) {
      double mean, var;
      if (training) {
        double s = 0, s2 = 0;
        for (int n = 0; n < N; ++n) {
          const float* p = x.data() + n * x.stride0() + c * vol;
          for (std::size_t i = 0; i < vol; ++i) s += p[i];
        }
        mean = s / M;
        for (int n = 0; n < N; ++n) {
          const float* p = x.data() + n * x.stride0() + c * vol;
          for (std::size_t i = 0; i < vol; ++i) {
            const double d = p[i] - mean;
            s2 += d * d;
          }
        }
        var = s2 / M;
        running_mean_.value[c] = static_cast<float>((1 - momentum_) * running_mean_.value[c] + momentum_ * mean);
        const double unbiased = M > 1 ? var * M / (M - 1) : var;
        running_var_.value[c] = static_cast<float>((1 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
      const float fm = static_cast<float>(mean), gm = gamma_.value[c], bt = beta_.value[c];
      if (training) inv_std_[c] = inv;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = n * x.stride0() + c * vol;
        const float* p = x.data() + off;
        float* q = y.data() + off;
        float* h = training ? xhat_.data() + off : nullptr;
        for (std::size_t i = 0; i < vol; ++i) {
          const float xh = (p[i] - fm) * inv;
          if (h) h[i] = xh;
          q[i] = gm * xh + bt;
        }
      }
    }
    return y;
  }

  /// Training-mode backward.
  TensorF backward(const TensorF& dy) {
    if (!trained_) throw std::logic_error("BatchNorm3d::backward requires a training-mode forward");
    const int N = dy.dim(0), C = channels_;
    const std::size_t vol = dy.stride0() / C;
    const double M = static_cast<double>(N) * vol;
    TensorF dx(dy.shape());
    for (int c = 0; c < C; ++c) {
      double sdy = 0, sdyx = 0;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = n * dy.stride0() + c * vol;
        const float* g = dy.data() + off;
        const float* h = xhat_.data() + off;
        for (std::size_t i = 0; i < vol; ++i) {
          sdy += g[i];
          sdyx += static_cast<double>(g[i]) * h[i];
        }
      }
      beta_.grad[c] += static_cast<float>(sdy);
      gamma_.grad[c] += static_cast<float>(sdyx);
      const float k = static_cast<float>(gamma_.value[c] * inv_std_[c] / M);
      const float a = static_cast<float>(sdy), b = static_cast<float>(sdyx), m = static_cast<float>(M);
      for (int n = 0; n < N; ++n) {
        const std::size_t off = n * dy.stride0() + c * vol;
        const float* g = dy.data() + off;
        const float* h = xhat_.data() + off;
        float* o = dx.data() + off;
        for (std::size_t i = 0; i < vol; ++i) o[i] = k * (m * g[i] - a - h[i] * b);
      }
    }
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Buffer*>& out) {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
  void release() {
    xhat_ = TensorF();
  }

 private:
  int channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Param gamma_, beta_;
  Buffer running_mean_, running_var_;
  bool trained_ = false;
  TensorF xhat_;
  std::vector<float> inv_std_;
};

// ---------------------------------------------------------------------------

inline void relu_inplace(TensorF& x) {
  for (auto& v : x.values()) v = v > 0 ? v : 0.0f;
}

/// dy masked by y > 0 (y is the rectifier's output).
inline void relu_backward_inplace(const TensorF& y, TensorF& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y[i] > 0)) dy[i] = 0.0f;
}

/// Channel concatenation [a, b].
inline TensorF concat_channels(const TensorF& a, const TensorF& b) {
  if (a.dim(0) != b.dim(0) || spatial(a) != spatial(b))
    throw std::invalid_argument("concat_channels: shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  const int N = a.dim(0);
  TensorF out({N, a.dim(1) + b.dim(1), a.dim(2), a.dim(3), a.dim(4)});
  for (int n = 0; n < N; ++n) {
    float* o = out.data() + n * out.stride0();
    std::copy(a.data() + n * a.stride0(), a.data() + (n + 1) * a.stride0(), o);
    std::copy(b.data() + n * b.stride0(), b.data() + (n + 1) * b.stride0(), o + a.stride0());
  }
  return out;
}

/// Split a concatenated gradient back into its [first, rest] parts.
inline std::pair<TensorF, TensorF> split_channels(const TensorF& g, int first) {
  const int N = g.dim(0), C = g.dim(1);
  TensorF a({N, first, g.dim(2), g.dim(3), g.dim(4)}), b({N, C - first, g.dim(2), g.dim(3), g.dim(4)});
  for (int n = 0; n < N; ++n) {
    const float* s = g.data() + n * g.stride0();
    std::copy(s, s + a.stride0(), a.data() + n * a.stride0());
    std::copy(s + a.stride0(), s + g.stride0(), b.data() + n * b.stride0());
  }
  return {std::move(a), std::move(b)};
}

inline void add_inplace(TensorF& a, const TensorF& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// Mean over (D, H, W): N x C x D x H x W -> N x C.
inline TensorF global_avg_pool(const TensorF& x) {
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t vol = x.stride0() / C;
  TensorF y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float* p = x.data() + n * x.stride0() + c * vol;
      double s = 0;
      for (std::size_t i = 0; i < vol; ++i) s += p[i];
      y[n * C + c] = static_cast<float>(s / vol);
    }
  return y;
}

inline TensorF global_avg_pool_backward(const std::vector<int>& x_shape, const TensorF& dy) {
  TensorF dx(x_shape);
  const int N = x_shape[0], C = x_shape[1];
  const std::size_t vol = dx.stride0() / C;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float g = dy[n * C + c] / static_cast<float>(vol);
      float* p = dx.data() + n * dx.stride0() + c * vol;
      for (std::size_t i = 0; i < vol; ++i) p[i] = g;
    }
  return dx;
}

/// Fully connected layer on N x in tensors.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {
    fill_normal(weight_.value, std::sqrt(1.0 / in), rng);
  }
  TensorF forward(const TensorF& x) const {
    const int N = x.dim(0);
    TensorF y({N, out_});
    MatMap(y.data(), N, out_).noalias() =
        ConstMatMap(x.data(), N, in_) * ConstMatMap(weight_.value.data(), out_, in_).transpose();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) y[n * out_ + o] += bias_.value[o];
    return y;
  }
  TensorF backward(const TensorF& x, const TensorF& dy) {
    const int N = x.dim(0);
    ConstMatMap dyn(dy.data(), N, out_);
    MatMap(weight_.grad.data(), out_, in_).noalias() += dyn.transpose() * ConstMatMap(x.data(), N, in_);
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dy[n * out_ + o];
    TensorF dx({N, in_});
    MatMap(dx.data(), N, in_).noalias() = dyn * ConstMatMap(weight_.value.data(), out_, in_);
    return dx;
  }
  void collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_ = 0, out_ = 0;
  Param weight_, bias_;
};

}  // namespace centrifuge::nn
