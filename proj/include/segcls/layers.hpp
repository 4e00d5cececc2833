#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "segcls/error.hpp"
#include "segcls/modelspec.hpp"
#include "segcls/rng.hpp"
#include "segcls/tensor.hpp"

// Trainable kernels for the MLP/CNN families. Each layer caches what its
// backward pass needs from the most recent forward call.
namespace segcls::nn {

enum class Mode { kTrain, kEval };

/// A trainable tensor. `decay` marks tensors that receive weight decay
/// (weights only; biases and BN affine parameters are exempt).
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool decay = true;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  /// Non-trainable state saved with checkpoints.
  virtual std::vector<std::pair<std::string, Tensor<T>*>> buffers() { return {}; }
  virtual std::string kind() const = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv2DLayer final : public Layer<T> {
 public:
  Conv2DLayer(std::size_t in_channels, const model::Conv2D& spec) : spec_(spec), in_channels_(in_channels) {
    weight_.name = "weight";
    weight_.value = Tensor<T>({spec.out_channels, in_channels, spec.kernel_h, spec.kernel_w});
    if (spec.bias) {
      bias_.name = "bias";
      bias_.value = Tensor<T>({spec.out_channels});
      bias_.decay = false;
    }
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 4 || x.dim(1) != in_channels_) {
      throw UsageError("conv2d expects (N," + std::to_string(in_channels_) + ",H,W) input, got " +
                       dims_string(x.shape()));
    }
    input_ = x;
    const std::size_t N = x.dim(0), C = in_channels_, H = x.dim(2), W = x.dim(3);
    const std::size_t OH = out_extent(H, spec_.kernel_h, spec_.stride_h, spec_.pad_h);
    const std::size_t OW = out_extent(W, spec_.kernel_w, spec_.stride_w, spec_.pad_w);
    const std::size_t K = spec_.out_channels, KH = spec_.kernel_h, KW = spec_.kernel_w;
    Tensor<T> y({N, K, OH, OW});
    const T* xd = x.ptr();
    const T* wd = weight_.value.ptr();
    T* yd = y.ptr();
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        const T b = spec_.bias ? bias_.value[k] : T(0);
        T* yk = yd + (n * K + k) * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          for (std::size_t ow = 0; ow < OW; ++ow) {
            T acc = b;
            for (std::size_t c = 0; c < C; ++c) {
              const T* xc = xd + (n * C + c) * H * W;
              const T* wkc = wd + (k * C + c) * KH * KW;
              for (std::size_t i = 0; i < KH; ++i) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * spec_.stride_h + i) -
                                static_cast<std::ptrdiff_t>(spec_.pad_h);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                const T* xrow = xc + static_cast<std::size_t>(ih) * W;
                const T* wrow = wkc + i * KW;
                for (std::size_t j = 0; j < KW; ++j) {
                  const auto iw = static_cast<std::ptrdiff_t>(ow * spec_.stride_w + j) -
                                  static_cast<std::ptrdiff_t>(spec_.pad_w);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  acc += xrow[iw] * wrow[j];
                }
              }
            }
            yk[oh * OW + ow] = acc;
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = input_;
    const std::size_t N = x.dim(0), C = in_channels_, H = x.dim(2), W = x.dim(3);
    const std::size_t K = spec_.out_channels, KH = spec_.kernel_h, KW = spec_.kernel_w;
    const std::size_t OH = gy.dim(2), OW = gy.dim(3);
    Tensor<T> gx(x.shape());
    auto gw = weight_.value.grad();
    const T* xd = x.ptr();
    const T* wd = weight_.value.ptr();
    const T* gyd = gy.ptr();
    T* gxd = gx.ptr();
    if (spec_.bias) {
      auto gb = bias_.value.grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          const T* g = gyd + (n * K + k) * OH * OW;
          T s = 0;
          for (std::size_t i = 0; i < OH * OW; ++i) s += g[i];
          gb[k] += s;
        }
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        const T* gk = gyd + (n * K + k) * OH * OW;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const T g = gk[oh * OW + ow];
            if (g == T(0)) continue;
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t xoff = (n * C + c) * H * W;
              const std::size_t woff = (k * C + c) * KH * KW;
              for (std::size_t i = 0; i < KH; ++i) {
                const auto ih = static_cast<std::ptrdiff_t>(oh * spec_.stride_h + i) -
                                static_cast<std::ptrdiff_t>(spec_.pad_h);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t j = 0; j < KW; ++j) {
                  const auto iw = static_cast<std::ptrdiff_t>(ow * spec_.stride_w + j) -
                                  static_cast<std::ptrdiff_t>(spec_.pad_w);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t xi = xoff + static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw);
                  gw[woff + i * KW + j] += g * xd[xi];
                  gxd[xi] += g * wd[woff + i * KW + j];
                }
              }
            }
          }
        }
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override {
    if (spec_.bias) return {&weight_, &bias_};
    return {&weight_};
  }
  std::string kind() const override { return "conv2d"; }

 private:
  static std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
    if (in + 2 * p < k) throw UsageError("conv2d kernel larger than padded input");
    return (in + 2 * p - k) / s + 1;
  }

  model::Conv2D spec_;
  std::size_t in_channels_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// y = x W + b with W stored as (in, out).
template <typename T>
class LinearLayer final : public Layer<T> {
 public:
  LinearLayer(std::size_t in, std::size_t out, std::string kind = "fully_connected") : kind_(std::move(kind)) {
    weight_.name = "weight";
    weight_.value = Tensor<T>({in, out});
    bias_.name = "bias";
    bias_.value = Tensor<T>({out});
    bias_.decay = false;
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  std::size_t in_dim() const { return weight_.value.dim(0); }
  std::size_t out_dim() const { return weight_.value.dim(1); }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 2 || x.dim(1) != in_dim()) {
      throw UsageError(kind_ + " expects (N," + std::to_string(in_dim()) + ") input, got " + dims_string(x.shape()));
    }
    input_ = x;
    const std::size_t N = x.dim(0), D = in_dim(), K = out_dim();
    Tensor<T> y({N, K});
    for (std::size_t n = 0; n < N; ++n) {
      T* yr = y.ptr() + n * K;
      std::copy(bias_.value.ptr(), bias_.value.ptr() + K, yr);
      const T* xr = x.ptr() + n * D;
      for (std::size_t d = 0; d < D; ++d) {
        const T xv = xr[d];
        if (xv == T(0)) continue;
        const T* wr = weight_.value.ptr() + d * K;
        for (std::size_t k = 0; k < K; ++k) yr[k] += xv * wr[k];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const std::size_t N = input_.dim(0), D = in_dim(), K = out_dim();
    Tensor<T> gx({N, D});
    auto gw = weight_.value.grad();
    auto gb = bias_.value.grad();
    for (std::size_t n = 0; n < N; ++n) {
      const T* g = gy.ptr() + n * K;
      const T* xr = input_.ptr() + n * D;
      T* gxr = gx.ptr() + n * D;
      for (std::size_t k = 0; k < K; ++k) gb[k] += g[k];
      for (std::size_t d = 0; d < D; ++d) {
        const T* wr = weight_.value.ptr() + d * K;
        T* gwr = gw.data() + d * K;
        T acc = 0;
        for (std::size_t k = 0; k < K; ++k) {
          gwr[k] += xr[d] * g[k];
          acc += wr[k] * g[k];
        }
        gxr[d] = acc;
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  std::string kind() const override { return kind_; }

 private:
  std::string kind_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalisation for (N, C) or (N, C, H, W) inputs.
template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  static constexpr T kMomentum = T(0.9);
  static constexpr T kEps = T(1e-5);

  explicit BatchNormLayer(std::size_t channels) {
    scale_.name = "scale";
    scale_.value = Tensor<T>({channels}, T(1));
    scale_.decay = false;
    shift_.name = "shift";
    shift_.value = Tensor<T>({channels}, T(0));
    shift_.decay = false;
    running_mean_ = Tensor<T>({channels}, T(0));
    running_var_ = Tensor<T>({channels}, T(1));
  }

  Param<T>& scale() { return scale_; }
  Param<T>& shift() { return shift_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    const std::size_t C = channels();
    if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != C) {
      throw UsageError("batch_norm expects (N," + std::to_string(C) + "[,H,W]) input, got " + dims_string(x.shape()));
    }
    const std::size_t N = x.dim(0);
    const std::size_t S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const std::size_t M = N * S;
    mode_ = mode;
    shape_ = x.shape();
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(C, T(0));
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      T mean, var;
      if (mode == Mode::kTrain) {
        T s = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.ptr() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) s += p[i];
        }
        mean = s / static_cast<T>(M);
        T ss = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.ptr() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) ss += (p[i] - mean) * (p[i] - mean);
        }
        var = ss / static_cast<T>(M);
        const T unbiased = M > 1 ? ss / static_cast<T>(M - 1) : var;
        running_mean_[c] = kMomentum * running_mean_[c] + (T(1) - kMomentum) * mean;
        running_var_[c] = kMomentum * running_var_[c] + (T(1) - kMomentum) * unbiased;
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const T inv = T(1) / std::sqrt(var + kEps);
      inv_std_[c] = inv;
      const T g = scale_.value[c], b = shift_.value[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const T h = (x[off + i] - mean) * inv;
          xhat_[off + i] = h;
          y[off + i] = g * h + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const std::size_t C = channels(), N = shape_[0];
    const std::size_t S = shape_.size() == 4 ? shape_[2] * shape_[3] : 1;
    const auto M = static_cast<T>(N * S);
    Tensor<T> gx(shape_);
    auto gscale = scale_.value.grad();
    auto gshift = shift_.value.grad();
    for (std::size_t c = 0; c < C; ++c) {
      T sum_g = 0, sum_gh = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          sum_g += gy[off + i];
          sum_gh += gy[off + i] * xhat_[off + i];
        }
      }
      gscale[c] += sum_gh;
      gshift[c] += sum_g;
      const T g = scale_.value[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          if (mode_ == Mode::kTrain) {
            gx[off + i] = g * inv_std_[c] * (gy[off + i] - sum_g / M - xhat_[off + i] * sum_gh / M);
          } else {
            gx[off + i] = g * inv_std_[c] * gy[off + i];
          }
        }
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&scale_, &shift_}; }
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  std::string kind() const override { return "batch_norm"; }

 private:
  std::size_t channels() const { return scale_.value.size(); }

  Param<T> scale_;
  Param<T> shift_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Mode mode_ = Mode::kTrain;
  Dims shape_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

template <typename T>
class ReLULayer final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    input_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = input_[i] > T(0) ? gy[i] : T(0);
    return gx;
  }
  std::string kind() const override { return "relu"; }

 private:
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// Max pooling; padded cells never win. Ties go to the first cell in
/// row-major window order.
template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  explicit MaxPoolLayer(const model::MaxPool& spec) : spec_(spec) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 4) throw UsageError("max_pool expects (N,C,H,W), got " + dims_string(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H + 2 * spec_.pad_h < spec_.kernel_h || W + 2 * spec_.pad_w < spec_.kernel_w)
      throw UsageError("max_pool window larger than input " + dims_string(x.shape()));
    const std::size_t OH = (H + 2 * spec_.pad_h - spec_.kernel_h) / spec_.stride_h + 1;
    const std::size_t OW = (W + 2 * spec_.pad_w - spec_.kernel_w) / spec_.stride_w + 1;
    in_shape_ = x.shape();
    Tensor<T> y({N, C, OH, OW});
    argmax_.assign(y.size(), 0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T* plane = x.ptr() + nc * H * W;
      for (std::size_t oh = 0; oh < OH; ++oh) {
        for (std::size_t ow = 0; ow < OW; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = std::numeric_limits<std::size_t>::max();
          for (std::size_t i = 0; i < spec_.kernel_h; ++i) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * spec_.stride_h + i) -
                            static_cast<std::ptrdiff_t>(spec_.pad_h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t j = 0; j < spec_.kernel_w; ++j) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * spec_.stride_w + j) -
                              static_cast<std::ptrdiff_t>(spec_.pad_w);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t idx = static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw);
              if (best_idx == std::numeric_limits<std::size_t>::max() || plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          if (best_idx == std::numeric_limits<std::size_t>::max())
            throw UsageError("max_pool window covers only padding");
          const std::size_t o = nc * OH * OW + oh * OW + ow;
          y[o] = best;
          argmax_[o] = nc * H * W + best_idx;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_shape_);
    for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax_[o]] += gy[o];
    return gx;
  }
  std::string kind() const override { return "max_pool"; }

 private:
  model::MaxPool spec_;
  Dims in_shape_;
  std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

/// (N, C, H, W) -> (N, C): mean over each feature map.
template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 4) throw UsageError("global_avg_pool expects (N,C,H,W), got " + dims_string(x.shape()));
    const std::size_t S = x.dim(2) * x.dim(3);
    if (S == 0) throw UsageError("global_avg_pool on an empty feature map");
    in_shape_ = x.shape();
    Tensor<T> y({x.dim(0), x.dim(1)});
    for (std::size_t nc = 0; nc < y.size(); ++nc) {
      T s = 0;
      const T* p = x.ptr() + nc * S;
      for (std::size_t i = 0; i < S; ++i) s += p[i];
      y[nc] = s / static_cast<T>(S);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_shape_);
    const std::size_t S = in_shape_[2] * in_shape_[3];
    for (std::size_t nc = 0; nc < gy.size(); ++nc) {
      const T g = gy[nc] / static_cast<T>(S);
      std::fill(gx.ptr() + nc * S, gx.ptr() + (nc + 1) * S, g);
    }
    return gx;
  }
  std::string kind() const override { return "global_avg_pool"; }

 private:
  Dims in_shape_;
};

template <typename T>
class FlattenLayer final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return gy.reshaped(in_shape_); }
  std::string kind() const override { return "flatten"; }

 private:
  Dims in_shape_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-p) in train mode; eval mode
/// is the identity.
template <typename T>
class DropoutLayer final : public Layer<T> {
 public:
  DropoutLayer(double p, std::uint64_t seed) : p_(p), rng_(seed) {
    if (!(p >= 0.0 && p < 1.0)) throw UsageError("dropout p must be in [0, 1)");
  }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  double p() const { return p_; }
  void set_p(double p) { p_ = p; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    mask_.assign(x.size(), T(1));
    if (mode == Mode::kEval || p_ == 0.0) return x;
    const T scale = T(1) / static_cast<T>(1.0 - p_);
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng_.uniform() < p_ ? T(0) : scale;
      y[i] = x[i] * mask_[i];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * mask_[i];
    return gx;
  }
  std::string kind() const override { return "dropout"; }

 private:
  double p_;
  Rng rng_;
  std::vector<T> mask_;
};

// ---------------------------------------------------------------------------
// Output activations and losses

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

/// Row-wise softmax over the class axis of an (N, K) tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& z) {
  const std::size_t N = z.dim(0), K = z.dim(1);
  Tensor<T> p(z.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* zr = z.ptr() + n * K;
    T* pr = p.ptr() + n * K;
    const T m = *std::max_element(zr, zr + K);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) s += (pr[k] = std::exp(zr[k] - m));
    for (std::size_t k = 0; k < K; ++k) pr[k] /= s;
  }
  return p;
}

template <typename T>
Tensor<T> sigmoid_all(const Tensor<T>& z) {
  Tensor<T> p(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i]);
  return p;
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& logits, model::Activation a) {
  return a == model::Activation::kSigmoid ? sigmoid_all(logits) : softmax_rows(logits);
}

enum class LossKind { kMultiLabelBce, kCategoricalCe };

inline LossKind loss_for(model::Activation a) {
  return a == model::Activation::kSigmoid ? LossKind::kMultiLabelBce : LossKind::kCategoricalCe;
}

template <typename T>
struct LossResult {
  T value = 0;
  Tensor<T> grad_logits;
};

template <typename T>
void require_binary_labels(const Tensor<T>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != T(0) && labels[i] != T(1)) throw UsageError("labels must be 0 or 1");
  }
}

/// Mean over batch and classes of the sigmoid cross-entropy, logits form.
template <typename T>
LossResult<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& labels) {
  require_shape(labels, logits.shape(), "bce labels");
  require_binary_labels(labels);
  LossResult<T> r;
  r.grad_logits = Tensor<T>(logits.shape());
  const auto count = static_cast<T>(logits.size());
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T z = logits[i], y = labels[i];
    total += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad_logits[i] = (sigmoid(z) - y) / count;
  }
  r.value = total / count;
  return r;
}

/// Mean over the batch of softmax cross-entropy, log-sum-exp form.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels) {
  require_shape(labels, logits.shape(), "cross-entropy labels");
  require_binary_labels(labels);
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  LossResult<T> r;
  r.grad_logits = softmax_rows(logits);
  T total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* zr = logits.ptr() + n * K;
    const T m = *std::max_element(zr, zr + K);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(zr[k] - m);
    const T lse = m + std::log(s);
    for (std::size_t k = 0; k < K; ++k) {
      const T y = labels[n * K + k];
      total += y * (lse - zr[k]);
      r.grad_logits[n * K + k] = (r.grad_logits[n * K + k] - y) / static_cast<T>(N);
    }
  }
  r.value = total / static_cast<T>(N);
  return r;
}

template <typename T>
LossResult<T> compute_loss(const Tensor<T>& logits, const Tensor<T>& labels, LossKind kind) {
  return kind == LossKind::kMultiLabelBce ? bce_with_logits(logits, labels) : softmax_cross_entropy(logits, labels);
}

/// Probability-space BCE, mean over batch and classes. Reference form for
/// scores that already passed through the sigmoid.
template <typename T>
T binary_cross_entropy(const Tensor<T>& probs, const Tensor<T>& labels) {
  require_shape(labels, probs.shape(), "bce labels");
  require_binary_labels(labels);
  T total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    total -= labels[i] == T(1) ? std::log(probs[i]) : std::log1p(-probs[i]);
  }
  return total / static_cast<T>(probs.size());
}

}  // namespace segcls::nn
