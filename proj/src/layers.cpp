// SPDX-License-Identifier: Apache-2.0
#include "ccpc/layers.hpp"

#include <cblas.h>

#include <cmath>

namespace ccpc::nn {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double inverse_softplus(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename T>
void init_uniform(Tensor<T>& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

template <typename T>
void im2col(const T* img, int channels, int height, int width, int kernel,
            int stride, int pad, int out_h, int out_w, T* col) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * kernel + ky) * kernel +
                        kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill_n(row, out_w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int kernel,
            int stride, int pad, int out_h, int out_w, T* img) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(c) * kernel + ky) *
                                  kernel +
                              kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * width;
          const T* srow = src + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng)
    : in_(in),
      out_(out),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(Shape{out, in, kernel, kernel}),
      bias_(Shape{1, out, 1, 1}) {
  if (in < 1 || out < 1 || kernel < 1 || stride < 1 || pad < 0) {
    throw InvalidParamsError("conv2d geometry");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in) * k_ * k_);
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

template <typename T>
void Conv2d<T>::set_mask(Tensor<T> mask) {
  if (mask.shape() != weight_.value.shape()) {
    throw DimensionError("mask " + mask.shape().str() + " for weight " +
                         weight_.value.shape().str());
  }
  mask_ = std::move(mask);
  apply_mask();
}

template <typename T>
void Conv2d<T>::apply_mask() {
  if (!mask_) return;
  for (std::size_t i = 0; i < mask_->size(); ++i) {
    weight_.value[i] *= (*mask_)[i];
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_) {
    throw DimensionError("conv2d expects " + std::to_string(in_) +
                         " channels, got " + x.shape().str());
  }
  const int oh = (x.h() + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (x.w() + 2 * pad_ - k_) / stride_ + 1;
  if (oh < 1 || ow < 1) throw DimensionError("conv2d input " + x.shape().str());
  input_ = x;
  Tensor<T> y(x.n(), out_, oh, ow);
  const int p = oh * ow;
  const int ckk = in_ * k_ * k_;
  const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * p);
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.sample(n);
    if (!pointwise) {
      im2col(src, in_, x.h(), x.w(), k_, stride_, pad_, oh, ow, col.data());
      src = col.data();
    }
    T* dst = y.sample(n);
    for (int o = 0; o < out_; ++o) {
      std::fill_n(dst + static_cast<std::size_t>(o) * p, p, bias_.value[o]);
    }
    gemm(false, false, out_, p, ckk, T(1), weight_.value.data(), ckk, src, p,
         T(1), dst, p);
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& gy) {
  const Tensor<T>& x = input_;
  const int oh = gy.h();
  const int ow = gy.w();
  const int p = oh * ow;
  const int ckk = in_ * k_ * k_;
  const bool pointwise = k_ == 1 && stride_ == 1 && pad_ == 0;
  Tensor<T> gx(x.shape());
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(ckk) * p);
  std::vector<T> gcol(pointwise ? 0 : static_cast<std::size_t>(ckk) * p);
  for (int n = 0; n < x.n(); ++n) {
    const T* g = gy.sample(n);
    for (int o = 0; o < out_; ++o) {
      const T* go = g + static_cast<std::size_t>(o) * p;
      T acc = 0;
      for (int i = 0; i < p; ++i) acc += go[i];
      bias_.grad[o] += acc;
    }
    const T* src = x.sample(n);
    if (!pointwise) {
      im2col(x.sample(n), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow,
             col.data());
      src = col.data();
    }
    gemm(false, true, out_, ckk, p, T(1), g, p, src, p, T(1),
         weight_.grad.data(), ckk);
    if (pointwise) {
      gemm(true, false, ckk, p, out_, T(1), weight_.value.data(), ckk, g, p,
           T(0), gx.sample(n), p);
    } else {
      gemm(true, false, ckk, p, out_, T(1), weight_.value.data(), ckk, g, p,
           T(0), gcol.data(), p);
      col2im(gcol.data(), in_, x.h(), x.w(), k_, stride_, pad_, oh, ow,
             gx.sample(n));
    }
  }
  if (mask_) {
    for (std::size_t i = 0; i < mask_->size(); ++i) {
      weight_.grad[i] *= (*mask_)[i];
    }
  }
  return gx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix,
                        std::vector<NamedParam<T>>& out) {
  out.push_back({join(prefix, "weight"), &weight_});
  out.push_back({join(prefix, "bias"), &bias_});
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int in, int out, int kernel, int stride,
                                    int pad, int output_pad, Rng& rng)
    : in_(in),
      out_(out),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      output_pad_(output_pad),
      weight_(Shape{in, out, kernel, kernel}),
      bias_(Shape{1, out, 1, 1}) {
  if (in < 1 || out < 1 || kernel < 1 || stride < 1 || pad < 0 ||
      output_pad < 0 || output_pad >= stride) {
    throw InvalidParamsError("conv_transpose2d geometry");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(out) * k_ * k_);
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_) {
    throw DimensionError("conv_transpose2d expects " + std::to_string(in_) +
                         " channels, got " + x.shape().str());
  }
  const int oh = (x.h() - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
  const int ow = (x.w() - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
  input_ = x;
  Tensor<T> y(x.n(), out_, oh, ow);
  const int p = x.h() * x.w();
  const int ckk = out_ * k_ * k_;
  std::vector<T> col(static_cast<std::size_t>(ckk) * p);
  for (int n = 0; n < x.n(); ++n) {
    gemm(true, false, ckk, p, in_, T(1), weight_.value.data(), ckk,
         x.sample(n), p, T(0), col.data(), p);
    T* dst = y.sample(n);
    col2im(col.data(), out_, oh, ow, k_, stride_, pad_, x.h(), x.w(), dst);
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int o = 0; o < out_; ++o) {
      T* d = dst + o * plane;
      const T b = bias_.value[o];
      for (std::size_t i = 0; i < plane; ++i) d[i] += b;
    }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& gy) {
  const Tensor<T>& x = input_;
  const int p = x.h() * x.w();
  const int ckk = out_ * k_ * k_;
  const std::size_t plane = static_cast<std::size_t>(gy.h()) * gy.w();
  Tensor<T> gx(x.shape());
  std::vector<T> gcol(static_cast<std::size_t>(ckk) * p);
  for (int n = 0; n < x.n(); ++n) {
    const T* g = gy.sample(n);
    for (int o = 0; o < out_; ++o) {
      const T* go = g + o * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += go[i];
      bias_.grad[o] += acc;
    }
    im2col(g, out_, gy.h(), gy.w(), k_, stride_, pad_, x.h(), x.w(),
           gcol.data());
    gemm(false, true, in_, ckk, p, T(1), x.sample(n), p, gcol.data(), p, T(1),
         weight_.grad.data(), ckk);
    gemm(false, false, in_, p, ckk, T(1), weight_.value.data(), ckk,
         gcol.data(), p, T(0), gx.sample(n), p);
  }
  return gx;
}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix,
                                 std::vector<NamedParam<T>>& out) {
  out.push_back({join(prefix, "weight"), &weight_});
  out.push_back({join(prefix, "bias"), &bias_});
}

// ------------------------------------------------------------------- GDN

template <typename T>
Gdn<T>::Gdn(int channels, bool inverse)
    : channels_(channels),
      inverse_(inverse),
      beta_raw_(Shape{1, channels, 1, 1}),
      gamma_raw_(Shape{1, 1, channels, channels}) {
  std::vector<T> beta(channels, T(1));
  // Off-diagonals start small but not at the softplus dead zone.
  std::vector<T> gamma(static_cast<std::size_t>(channels) * channels,
                       T(1e-4));
  for (int c = 0; c < channels; ++c) gamma[c * channels + c] = T(0.1);
  set_effective(beta, gamma);
}

template <typename T>
std::vector<T> Gdn<T>::beta() const {
  std::vector<T> out(channels_);
  for (int c = 0; c < channels_; ++c) {
    out[c] = static_cast<T>(softplus(beta_raw_.value[c]) + kBetaFloor);
  }
  return out;
}

template <typename T>
std::vector<T> Gdn<T>::gamma() const {
  std::vector<T> out(gamma_raw_.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(softplus(gamma_raw_.value[i]));
  }
  return out;
}

template <typename T>
void Gdn<T>::set_effective(const std::vector<T>& beta,
                           const std::vector<T>& gamma) {
  if (static_cast<int>(beta.size()) != channels_ ||
      gamma.size() != static_cast<std::size_t>(channels_) * channels_) {
    throw DimensionError("gdn parameter sizes");
  }
  // softplus never reaches 0; zero gamma maps to a raw value whose softplus
  // is below float resolution of any realistic activation.
  constexpr double kGammaZero = 1e-12;
  for (int c = 0; c < channels_; ++c) {
    const double b = static_cast<double>(beta[c]) - kBetaFloor;
    if (!(b > 0)) throw InvalidParamsError("gdn beta must exceed floor");
    beta_raw_.value[c] = static_cast<T>(inverse_softplus(b));
  }
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    const double g = static_cast<double>(gamma[i]);
    if (g < 0) throw InvalidParamsError("gdn gamma must be nonnegative");
    gamma_raw_.value[i] =
        static_cast<T>(inverse_softplus(g > kGammaZero ? g : kGammaZero));
  }
}

template <typename T>
Tensor<T> Gdn<T>::forward(const Tensor<T>& x) {
  if (x.c() != channels_) {
    throw DimensionError("gdn expects " + std::to_string(channels_) +
                         " channels, got " + x.shape().str());
  }
  const int c = channels_;
  const int p = x.h() * x.w();
  const std::vector<T> beta = this->beta();
  const std::vector<T> gamma = this->gamma();
  input_ = x;
  norm_ = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  std::vector<T> sq(static_cast<std::size_t>(c) * p);
  for (int n = 0; n < x.n(); ++n) {
    const T* xs = x.sample(n);
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = xs[i] * xs[i];
    T* nr = norm_.sample(n);
    for (int ch = 0; ch < c; ++ch) {
      std::fill_n(nr + static_cast<std::size_t>(ch) * p, p, beta[ch]);
    }
    gemm(false, false, c, p, c, T(1), gamma.data(), c, sq.data(), p, T(1), nr,
         p);
    T* ys = y.sample(n);
    for (std::size_t i = 0; i < sq.size(); ++i) {
      const T s = std::sqrt(nr[i]);
      ys[i] = inverse_ ? xs[i] * s : xs[i] / s;
    }
  }
  return y;
}

template <typename T>
Tensor<T> Gdn<T>::backward(const Tensor<T>& gy) {
  // y_c = x_c * r(norm_c); r = norm^-1/2 (forward) or norm^1/2 (inverse).
  const Tensor<T>& x = input_;
  const int c = channels_;
  const int p = x.h() * x.w();
  const std::vector<T> gamma = this->gamma();
  Tensor<T> gx(x.shape());
  std::vector<T> q(static_cast<std::size_t>(c) * p);
  std::vector<T> sq(q.size());
  std::vector<T> tmp(q.size());
  std::vector<T> dgamma(gamma.size(), T(0));
  std::vector<T> dbeta(c, T(0));
  for (int n = 0; n < x.n(); ++n) {
    const T* xs = x.sample(n);
    const T* nr = norm_.sample(n);
    const T* g = gy.sample(n);
    T* gxs = gx.sample(n);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const T s = std::sqrt(nr[i]);
      T r, dr;
      if (inverse_) {
        r = s;
        dr = T(0.5) / s;
      } else {
        r = T(1) / s;
        dr = T(-0.5) / (nr[i] * s);
      }
      q[i] = g[i] * xs[i] * dr;
      gxs[i] = g[i] * r;
      sq[i] = xs[i] * xs[i];
    }
    // gx += 2 x * (gamma^T q)
    gemm(true, false, c, p, c, T(1), gamma.data(), c, q.data(), p, T(0),
         tmp.data(), p);
    for (std::size_t i = 0; i < q.size(); ++i) gxs[i] += 2 * xs[i] * tmp[i];
    gemm(false, true, c, c, p, T(1), q.data(), p, sq.data(), p, T(1),
         dgamma.data(), c);
    for (int ch = 0; ch < c; ++ch) {
      const T* qc = q.data() + static_cast<std::size_t>(ch) * p;
      T acc = 0;
      for (int i = 0; i < p; ++i) acc += qc[i];
      dbeta[ch] += acc;
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    beta_raw_.grad[ch] +=
        dbeta[ch] * static_cast<T>(sigmoid(beta_raw_.value[ch]));
  }
  for (std::size_t i = 0; i < dgamma.size(); ++i) {
    gamma_raw_.grad[i] +=
        dgamma[i] * static_cast<T>(sigmoid(gamma_raw_.value[i]));
  }
  return gx;
}

template <typename T>
void Gdn<T>::collect(const std::string& prefix,
                     std::vector<NamedParam<T>>& out) {
  out.push_back({join(prefix, "beta"), &beta_raw_});
  out.push_back({join(prefix, "gamma"), &gamma_raw_});
}

// ----------------------------------------------------------- activations

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.vec()) v = v > T(0) ? v : T(0);
  return output_;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = output_[i] > T(0) ? gy[i] : T(0);
  }
  return gx;
}

template <typename T>
Tensor<T> LeakyRelu<T>::forward(const Tensor<T>& x) {
  input_ = x;
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
  }
  return y;
}

template <typename T>
Tensor<T> LeakyRelu<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = input_[i] > T(0) ? gy[i] : slope_ * gy[i];
  }
  return gx;
}

template <typename T>
Tensor<T> Sigmoid<T>::forward(const Tensor<T>& x) {
  output_ = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    output_[i] = static_cast<T>(sigmoid(x[i]));
  }
  return output_;
}

template <typename T>
Tensor<T> Sigmoid<T>::backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = gy[i] * output_[i] * (T(1) - output_[i]);
  }
  return gx;
}

// ------------------------------------------------------------ Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x) {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->forward(x);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& gy) {
  if (layers_.empty()) return gy;
  Tensor<T> g = layers_.back()->backward(gy);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) {
    g = layers_[i]->backward(g);
  }
  return g;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix,
                            std::vector<NamedParam<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect(join(prefix, names_[i]), out);
  }
}

template <typename T>
void Sequential<T>::clear_cache() {
  for (auto& l : layers_) l->clear_cache();
}

// --------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(int channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, rng),
      conv2_(channels, channels, 3, 1, 1, rng),
      conv3_(channels, channels, 3, 1, 1, rng) {}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = relu1_.forward(conv1_.forward(x));
  h = relu2_.forward(conv2_.forward(h));
  h = conv3_.forward(h);
  add_inplace(h, x);
  return relu_out_.forward(h);
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& gy) {
  Tensor<T> g = relu_out_.backward(gy);
  Tensor<T> gx = g;
  g = conv3_.backward(g);
  g = conv2_.backward(relu2_.backward(g));
  g = conv1_.backward(relu1_.backward(g));
  add_inplace(gx, g);
  return gx;
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix,
                               std::vector<NamedParam<T>>& out) {
  conv1_.collect(join(prefix, "conv1"), out);
  conv2_.collect(join(prefix, "conv2"), out);
  conv3_.collect(join(prefix, "conv3"), out);
}

template <typename T>
void ResidualBlock<T>::clear_cache() {
  conv1_.clear_cache();
  conv2_.clear_cache();
  conv3_.clear_cache();
  relu1_.clear_cache();
  relu2_.clear_cache();
  relu_out_.clear_cache();
}

// ----------------------------------------------- GroupSeparatedAttention

template <typename T>
GroupSeparatedAttention<T>::Branch::Branch(int c, Rng& rng)
    : mask_head(c, c, 1, 1, 0, rng), post(c, c, 1, 1, 0, rng) {
  for (int i = 0; i < 3; ++i) {
    trunk.template emplace<ResidualBlock<T>>("rb" + std::to_string(i), c, rng);
  }
  for (int i = 0; i < 3; ++i) {
    mask.template emplace<ResidualBlock<T>>("rb" + std::to_string(i), c, rng);
  }
}

template <typename T>
GroupSeparatedAttention<T>::GroupSeparatedAttention(int channels, int groups,
                                                    Rng& rng)
    : channels_(channels) {
  if (groups < 1 || channels % groups != 0) {
    throw DimensionError("attention: " + std::to_string(channels) +
                         " channels do not split into " +
                         std::to_string(groups) + " groups");
  }
  for (int g = 0; g < groups; ++g) {
    branches_.push_back(std::make_unique<Branch>(channels / groups, rng));
  }
}

template <typename T>
Tensor<T> GroupSeparatedAttention<T>::forward(const Tensor<T>& x) {
  if (x.c() != channels_) {
    throw DimensionError("attention expects " + std::to_string(channels_) +
                         " channels, got " + x.shape().str());
  }
  const int gc = channels_ / groups();
  Tensor<T> y(x.shape());
  for (int g = 0; g < groups(); ++g) {
    Branch& b = *branches_[g];
    const Tensor<T> xg = slice_channels(x, g * gc, (g + 1) * gc);
    b.trunk_out = b.trunk.forward(xg);
    b.mask_out = b.sigmoid.forward(b.mask_head.forward(b.mask.forward(xg)));
    Tensor<T> prod(xg.shape());
    for (std::size_t i = 0; i < prod.size(); ++i) {
      prod[i] = b.trunk_out[i] * b.mask_out[i];
    }
    Tensor<T> out = b.post.forward(prod);
    add_inplace(out, xg);
    assign_channels(y, out, g * gc);
  }
  return y;
}

template <typename T>
Tensor<T> GroupSeparatedAttention<T>::backward(const Tensor<T>& gy) {
  const int gc = channels_ / groups();
  Tensor<T> gx(gy.shape());
  for (int g = 0; g < groups(); ++g) {
    Branch& b = *branches_[g];
    const Tensor<T> gyg = slice_channels(gy, g * gc, (g + 1) * gc);
    const Tensor<T> gprod = b.post.backward(gyg);
    Tensor<T> gtrunk(gprod.shape());
    Tensor<T> gmask(gprod.shape());
    for (std::size_t i = 0; i < gprod.size(); ++i) {
      gtrunk[i] = gprod[i] * b.mask_out[i];
      gmask[i] = gprod[i] * b.trunk_out[i];
    }
    Tensor<T> gxg = gyg;
    add_inplace(gxg, b.trunk.backward(gtrunk));
    add_inplace(gxg,
                b.mask.backward(b.mask_head.backward(b.sigmoid.backward(gmask))));
    assign_channels(gx, gxg, g * gc);
  }
  return gx;
}

template <typename T>
void GroupSeparatedAttention<T>::collect(const std::string& prefix,
                                         std::vector<NamedParam<T>>& out) {
  for (int g = 0; g < groups(); ++g) {
    const std::string p = join(prefix, "g" + std::to_string(g));
    Branch& b = *branches_[g];
    b.trunk.collect(join(p, "trunk"), out);
    b.mask.collect(join(p, "mask"), out);
    b.mask_head.collect(join(p, "mask_head"), out);
    b.post.collect(join(p, "post"), out);
  }
}

template <typename T>
void GroupSeparatedAttention<T>::clear_cache() {
  for (auto& b : branches_) {
    b->trunk.clear_cache();
    b->mask.clear_cache();
    b->mask_head.clear_cache();
    b->sigmoid.clear_cache();
    b->post.clear_cache();
    b->trunk_out = {};
    b->mask_out = {};
  }
}

#define CCPC_INSTANTIATE(T)                                                   \
  template void im2col<T>(const T*, int, int, int, int, int, int, int, int,   \
                          T*);                                                \
  template void col2im<T>(const T*, int, int, int, int, int, int, int, int,   \
                          T*);                                                \
  template class Conv2d<T>;                                                   \
  template class ConvTranspose2d<T>;                                          \
  template class Gdn<T>;                                                      \
  template class Relu<T>;                                                     \
  template class LeakyRelu<T>;                                                \
  template class Sigmoid<T>;                                                  \
  template class Sequential<T>;                                               \
  template class ResidualBlock<T>;                                            \
  template class GroupSeparatedAttention<T>;

CCPC_INSTANTIATE(float)
CCPC_INSTANTIATE(double)

#undef CCPC_INSTANTIATE

}  // namespace ccpc::nn
