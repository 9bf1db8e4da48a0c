#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "pcl_forge/common/tensor.hpp"
#include "pcl_forge/nn/params.hpp"

namespace pclf::nn {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// 2-D convolution, im2col + GEMM. Weight layout [out, in * k * k].

template <typename T>
struct Conv2d {
  int in_channels = 0, out_channels = 0, kernel = 3, stride = 1, pad = 1;
  Param<T>* weight = nullptr;
  Param<T>* bias = nullptr;

  struct Cache {
    int n = 0, in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    AlignedVector<T> cols;  // n * (in*k*k) * (out_h*out_w)
  };

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int k, int s, int p, std::uint64_t seed,
         bool with_bias, double init_std = 0.0)
      : in_channels(in), out_channels(out), kernel(k), stride(s), pad(p) {
    weight = init_std > 0 ? &store.add(name + ".weight", {out, in * k * k}, Init::normal, seed, init_std)
                          : &store.add(name + ".weight", {out, in * k * k}, Init::he_normal, seed);
    if (with_bias) bias = &store.add(name + ".bias", {out}, Init::zeros, seed);
  }

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }

  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    PCLF_REQUIRE(x.rank() == 4 && x.dim(1) == in_channels, InvalidArgument,
                 "conv: expected input channels " + std::to_string(in_channels) + ", got " + x.shape_string());
    cache.n = x.dim(0);
    cache.in_h = x.dim(2);
    cache.in_w = x.dim(3);
    cache.out_h = out_size(cache.in_h);
    cache.out_w = out_size(cache.in_w);
    const int ohw = cache.out_h * cache.out_w;
    cache.cols.assign(static_cast<std::size_t>(cache.n) * patch() * ohw, T(0));
    Tensor<T> y({cache.n, out_channels, cache.out_h, cache.out_w});
    ConstMapRM<T> w(weight->value.data(), out_channels, patch());
    for (int b = 0; b < cache.n; ++b) {
      T* cols = cache.cols.data() + static_cast<std::size_t>(b) * patch() * ohw;
      im2col(x.slice(b), cache.in_h, cache.in_w, cache.out_h, cache.out_w, cols);
      MapRM<T> out(y.slice(b), out_channels, ohw);
      out.noalias() = w * ConstMapRM<T>(cols, patch(), ohw);
      if (bias)
        for (int o = 0; o < out_channels; ++o) out.row(o).array() += bias->value[static_cast<std::size_t>(o)];
    }
    return y;
  }

  // Accumulates parameter gradients; returns dL/dx when requested.
  Tensor<T> backward(const Tensor<T>& gy, const Cache& cache, bool need_input_grad) const {
    const int ohw = cache.out_h * cache.out_w;
    MapRM<T> gw(weight->grad.data(), out_channels, patch());
    ConstMapRM<T> w(weight->value.data(), out_channels, patch());
    Tensor<T> gx;
    if (need_input_grad) gx = Tensor<T>({cache.n, in_channels, cache.in_h, cache.in_w});
    MatrixRM<T> gcols;
    for (int b = 0; b < cache.n; ++b) {
      ConstMapRM<T> g(gy.slice(b), out_channels, ohw);
      ConstMapRM<T> cols(cache.cols.data() + static_cast<std::size_t>(b) * patch() * ohw, patch(), ohw);
      gw.noalias() += g * cols.transpose();
      if (bias)
        for (int o = 0; o < out_channels; ++o) bias->grad[static_cast<std::size_t>(o)] += g.row(o).sum();
      if (need_input_grad) {
        gcols.noalias() = w.transpose() * g;
        col2im(gcols.data(), cache.in_h, cache.in_w, cache.out_h, cache.out_w, gx.slice(b));
      }
    }
    return gx;
  }

 private:
  void im2col(const T* x, int h, int w, int oh, int ow, T* cols) const {
    for (int c = 0; c < in_channels; ++c)
      for (int ki = 0; ki < kernel; ++ki)
        for (int kj = 0; kj < kernel; ++kj) {
          T* row = cols + ((static_cast<std::size_t>(c) * kernel + ki) * kernel + kj) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              row[oy * ow + ox] =
                  (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(static_cast<std::size_t>(c) * h + iy) * w + ix] : T(0);
            }
          }
        }
  }

  void col2im(const T* cols, int h, int w, int oh, int ow, T* gx) const {
    for (int c = 0; c < in_channels; ++c)
      for (int ki = 0; ki < kernel; ++ki)
        for (int kj = 0; kj < kernel; ++kj) {
          const T* row = cols + ((static_cast<std::size_t>(c) * kernel + ki) * kernel + kj) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix >= 0 && ix < w) gx[(static_cast<std::size_t>(c) * h + iy) * w + ix] += row[oy * ow + ox];
            }
          }
        }
  }
};

// ---------------------------------------------------------------------------
// Batch normalization over all axes but the channel axis. Works on [N,C,H,W]
// (statistics over N*H*W) and on [N,C] (statistics over N).

template <typename T>
struct BatchNorm {
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  Param<T>* running_mean = nullptr;
  Param<T>* running_var = nullptr;

  struct Cache {
    Mode mode = Mode::train;
    std::vector<T> xhat;
    std::vector<T> inv_std;
    int n = 0, spatial = 1;
  };

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, int c, std::uint64_t seed) : channels(c) {
    gamma = &store.add(name + ".gamma", {c}, Init::ones, seed);
    beta = &store.add(name + ".beta", {c}, Init::zeros, seed);
    running_mean = &store.add(name + ".running_mean", {c}, Init::zeros, seed, 0.0, false);
    running_var = &store.add(name + ".running_var", {c}, Init::ones, seed, 0.0, false);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache& cache) const {
    PCLF_REQUIRE(x.dim(1) == channels, InvalidArgument, "batchnorm: channel mismatch");
    const int n = x.dim(0);
    const int spatial = static_cast<int>(x.size() / (static_cast<std::size_t>(n) * channels));
    cache.mode = mode;
    cache.n = n;
    cache.spatial = spatial;
    cache.xhat.assign(x.size(), T(0));
    cache.inv_std.assign(static_cast<std::size_t>(channels), T(0));
    Tensor<T> y(x.shape());
    const double m = static_cast<double>(n) * spatial;
    for (int c = 0; c < channels; ++c) {
      double mean, var;
      if (mode == Mode::train) {
        double s = 0;
        for (int b = 0; b < n; ++b)
          for (int i = 0; i < spatial; ++i) s += x[index(b, c, i, spatial)];
        mean = s / m;
        double ss = 0;
        for (int b = 0; b < n; ++b)
          for (int i = 0; i < spatial; ++i) {
            const double d = x[index(b, c, i, spatial)] - mean;
            ss += d * d;
          }
        var = ss / m;
        const double unbiased = m > 1 ? ss / (m - 1) : var;
        auto& rm = running_mean->value[static_cast<std::size_t>(c)];
        auto& rv = running_var->value[static_cast<std::size_t>(c)];
        rm = static_cast<T>((1 - momentum) * rm + momentum * mean);
        rv = static_cast<T>((1 - momentum) * rv + momentum * unbiased);
      } else {
        mean = running_mean->value[static_cast<std::size_t>(c)];
        var = running_var->value[static_cast<std::size_t>(c)];
      }
      const double inv = 1.0 / std::sqrt(var + eps);
      cache.inv_std[static_cast<std::size_t>(c)] = static_cast<T>(inv);
      const T g = gamma->value[static_cast<std::size_t>(c)], bt = beta->value[static_cast<std::size_t>(c)];
      for (int b = 0; b < n; ++b)
        for (int i = 0; i < spatial; ++i) {
          const std::size_t k = index(b, c, i, spatial);
          const T xh = static_cast<T>((x[k] - mean) * inv);
          cache.xhat[k] = xh;
          y[k] = g * xh + bt;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) const {
    Tensor<T> gx(gy.shape());
    const int n = cache.n, spatial = cache.spatial;
    const double m = static_cast<double>(n) * spatial;
    for (int c = 0; c < channels; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (int b = 0; b < n; ++b)
        for (int i = 0; i < spatial; ++i) {
          const std::size_t k = index(b, c, i, spatial);
          sum_g += gy[k];
          sum_gx += static_cast<double>(gy[k]) * cache.xhat[k];
        }
      gamma->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
      beta->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
      const double g = gamma->value[static_cast<std::size_t>(c)];
      const double inv = cache.inv_std[static_cast<std::size_t>(c)];
      for (int b = 0; b < n; ++b)
        for (int i = 0; i < spatial; ++i) {
          const std::size_t k = index(b, c, i, spatial);
          if (cache.mode == Mode::train)
            gx[k] = static_cast<T>(g * inv / m * (m * gy[k] - sum_g - cache.xhat[k] * sum_gx));
          else
            gx[k] = static_cast<T>(g * inv * gy[k]);
        }
    }
    return gx;
  }

 private:
  std::size_t index(int b, int c, int i, int spatial) const {
    return (static_cast<std::size_t>(b) * channels + c) * spatial + i;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct Relu {
  struct Cache {
    std::vector<unsigned char> active;
  };
  static void forward_inplace(Tensor<T>& x, Cache& cache) {
    cache.active.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      cache.active[i] = x[i] > T(0);
      if (!cache.active[i]) x[i] = T(0);
    }
  }
  static void backward_inplace(Tensor<T>& g, const Cache& cache) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!cache.active[i]) g[i] = T(0);
  }
};

// ---------------------------------------------------------------------------
// Fully connected layer on [B, in] rows. Weight layout [out, in].

template <typename T>
struct Linear {
  int in_features = 0, out_features = 0;
  Param<T>* weight = nullptr;
  Param<T>* bias = nullptr;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, std::uint64_t seed, bool with_bias,
         double init_std = 0.0)
      : in_features(in), out_features(out) {
    weight = init_std > 0 ? &store.add(name + ".weight", {out, in}, Init::normal, seed, init_std)
                          : &store.add(name + ".weight", {out, in}, Init::he_normal, seed);
    if (with_bias) bias = &store.add(name + ".bias", {out}, Init::zeros, seed);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    PCLF_REQUIRE(x.rank() == 2 && x.dim(1) == in_features, InvalidArgument,
                 "linear: expected [B," + std::to_string(in_features) + "], got " + x.shape_string());
    const int b = x.dim(0);
    Tensor<T> y({b, out_features});
    if (b == 0) return y;
    MapRM<T> out(y.data(), b, out_features);
    out.noalias() = ConstMapRM<T>(x.data(), b, in_features) *
                    ConstMapRM<T>(weight->value.data(), out_features, in_features).transpose();
    if (bias)
      for (int r = 0; r < b; ++r)
        for (int o = 0; o < out_features; ++o) out(r, o) += bias->value[static_cast<std::size_t>(o)];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy, bool need_input_grad = true) const {
    const int b = x.dim(0);
    Tensor<T> gx({b, in_features});
    if (b == 0) return gx;
    ConstMapRM<T> g(gy.data(), b, out_features);
    MapRM<T>(weight->grad.data(), out_features, in_features).noalias() +=
        g.transpose() * ConstMapRM<T>(x.data(), b, in_features);
    if (bias)
      for (int o = 0; o < out_features; ++o) bias->grad[static_cast<std::size_t>(o)] += g.col(o).sum();
    if (need_input_grad)
      MapRM<T>(gx.data(), b, in_features).noalias() =
          g * ConstMapRM<T>(weight->value.data(), out_features, in_features);
    return gx;
  }
};

}  // namespace pclf::nn
