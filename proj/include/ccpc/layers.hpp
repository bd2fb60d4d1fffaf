// SPDX-License-Identifier: Apache-2.0
//
// Minimal layer library for the transform and entropy networks. Every layer
// caches what it needs during forward() and accumulates parameter gradients
// in backward(); backward() must follow the matching forward() call.
#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ccpc/tensor.hpp"

namespace ccpc::nn {

using Rng = std::mt19937_64;

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  explicit Param(Shape s) : value(s), grad(s) {}
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect(const std::string& /*prefix*/,
                       std::vector<NamedParam<T>>& /*out*/) {}
  /// Drops cached activations.
  virtual void clear_cache() {}
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<NamedParam<T>>& out) override;
  void clear_cache() override { input_ = {}; }

  /// Restricts the kernel to the taps where `mask` is 1. The mask has the
  /// weight's shape (out, in, k, k) and is re-applied after every update.
  void set_mask(Tensor<T> mask);
  void apply_mask();
  const Tensor<T>* mask() const { return mask_ ? &*mask_ : nullptr; }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

 private:
  int in_, out_, k_, stride_, pad_;
  Param<T> weight_;  // (out, in, k, k)
  Param<T> bias_;    // (1, out, 1, 1)
  std::optional<Tensor<T>> mask_;
  Tensor<T> input_;
};

/// Transposed convolution; weight layout (in, out, k, k).
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(int in, int out, int kernel, int stride, int pad,
                  int output_pad, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<NamedParam<T>>& out) override;
  void clear_cache() override { input_ = {}; }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  int output_pad() const { return output_pad_; }

 private:
  int in_, out_, k_, stride_, pad_, output_pad_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

/// Generalized divisive normalization, y_c = x_c / sqrt(beta_c + sum_k
/// gamma_ck x_k^2), or the multiplicative inverse. beta and gamma are stored
/// through a softplus reparameterization so that beta > 0 and gamma >= 0.
template <typename T>
class Gdn final : public Layer<T> {
 public:
  static constexpr double kBetaFloor = 1e-6;

  Gdn(int channels, bool inverse);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<NamedParam<T>>& out) override;
  void clear_cache() override {
    input_ = {};
    norm_ = {};
  }

  bool inverse() const { return inverse_; }
  int channels() const { return channels_; }
  /// Effective (positive) parameters.
  std::vector<T> beta() const;
  std::vector<T> gamma() const;
  /// Overwrites the effective parameters (inverts the reparameterization).
  void set_effective(const std::vector<T>& beta, const std::vector<T>& gamma);

  Param<T>& beta_raw() { return beta_raw_; }
  Param<T>& gamma_raw() { return gamma_raw_; }

 private:
  int channels_;
  bool inverse_;
  Param<T> beta_raw_;   // (1, C, 1, 1)
  Param<T> gamma_raw_;  // (1, 1, C, C), row c holds gamma_{c,*}
  Tensor<T> input_;
  Tensor<T> norm_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void clear_cache() override { output_ = {}; }

 private:
  Tensor<T> output_;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(T slope = T(0.01)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void clear_cache() override { input_ = {}; }
  T slope() const { return slope_; }

 private:
  T slope_;
  Tensor<T> input_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void clear_cache() override { output_ = {}; }

 private:
  Tensor<T> output_;
};

/// Chain of layers evaluated in insertion order.
template <typename T>
class Sequential : public Layer<T> {
 public:
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<NamedParam<T>>& out) override;
  void clear_cache() override;

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_[i]; }
  const Layer<T>& at(std::size_t i) const { return *layers_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Three 3x3 convolutions, each followed by a ReLU; the last ReLU is applied
/// after the identity shortcut is added.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(int channels, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<NamedParam<T>>& out) override;
  void clear_cache() override;

 private:
  Conv2d<T> conv1_, conv2_, conv3_;
  Relu<T> relu1_, relu2_, relu_out_;
};

/// Attention applied independently to `groups` contiguous channel groups:
///   out_g = x_g + post_g(trunk_g(x_g) * sigmoid(head_g(mask_g(x_g))))
/// where trunk_g and mask_g are three residual blocks each and head_g,
/// post_g are 1x1 convolutions. groups == 1 gives the single-branch variant.
template <typename T>
class GroupSeparatedAttention final : public Layer<T> {
 public:
  GroupSeparatedAttention(int channels, int groups, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<NamedParam<T>>& out) override;
  void clear_cache() override;

  int groups() const { return static_cast<int>(branches_.size()); }
  /// The 1x1 convolution applied after the trunk/mask product.
  Conv2d<T>& post(int group) { return branches_[group]->post; }
  Conv2d<T>& mask_head(int group) { return branches_[group]->mask_head; }

 private:
  struct Branch {
    Branch(int c, Rng& rng);
    Sequential<T> trunk;
    Sequential<T> mask;
    Conv2d<T> mask_head;
    Sigmoid<T> sigmoid;
    Conv2d<T> post;
    Tensor<T> trunk_out, mask_out;
  };
  int channels_;
  std::vector<std::unique_ptr<Branch>> branches_;
};

// Low-level kernels shared with the deterministic inference path.

template <typename T>
void im2col(const T* img, int channels, int height, int width, int kernel,
            int stride, int pad, int out_h, int out_w, T* col);
template <typename T>
void col2im(const T* col, int channels, int height, int width, int kernel,
            int stride, int pad, int out_h, int out_w, T* img);

/// C = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

double softplus(double x);
double inverse_softplus(double y);

}  // namespace ccpc::nn
