// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ccpc/layers.hpp"

namespace ccpc {

/// Channel layout of the transforms.
struct TransformConfig {
  int N = 192;               ///< intermediate channels
  int M = 192;               ///< latent channels
  double group_ratio = 0.5;  ///< s / M; 1 disables channel separation
  int attention_groups = 2;  ///< 2 = group-separated, 1 = single, 0 = none
  int F = 0;                 ///< hyper feature channels, 0 means 2 * M

  /// Number of first-group channels s = round(M * group_ratio).
  int split() const;
  int features() const { return F > 0 ? F : 2 * M; }
  /// Throws InvalidParamsError when an invariant is violated.
  void validate() const;
};

/// Spatial downsampling factor between image and latent grid.
inline constexpr int kLatentStride = 16;
/// Required alignment of H and W (latent stride times hyper stride).
inline constexpr int kPadMultiple = 64;

/// x (B x 3 x H x W) -> y (B x M x H/16 x W/16). Four stride-2 5x5
/// convolutions with GDN in between; attention after stages 2 and 4.
template <typename T>
class AnalysisTransform : public nn::Sequential<T> {
 public:
  AnalysisTransform(const TransformConfig& cfg, nn::Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) override;

 private:
  TransformConfig cfg_;
};

/// y_hat (B x M x h x w) -> x_hat (B x 3 x 16h x 16w). Mirror of the
/// analysis transform with inverse GDN; output is not clamped here.
template <typename T>
class SynthesisTransform : public nn::Sequential<T> {
 public:
  SynthesisTransform(const TransformConfig& cfg, nn::Rng& rng);
  Tensor<T> forward(const Tensor<T>& y_hat) override;

 private:
  TransformConfig cfg_;
};

/// y (B x M x h x w) -> z (B x N x h/4 x w/4).
template <typename T>
class HyperAnalysis : public nn::Sequential<T> {
 public:
  HyperAnalysis(const TransformConfig& cfg, nn::Rng& rng);
  Tensor<T> forward(const Tensor<T>& y) override;

 private:
  TransformConfig cfg_;
};

/// z_hat (B x N x h/4 x w/4) -> hyper features (B x F x h x w) consumed by
/// the parameter-estimation heads.
template <typename T>
class HyperSynthesis : public nn::Sequential<T> {
 public:
  HyperSynthesis(const TransformConfig& cfg, nn::Rng& rng);
  Tensor<T> forward(const Tensor<T>& z_hat) override;

  /// Same network evaluated with plain double loops in a fixed summation
  /// order. Encoder and decoder both call this, so the features feeding
  /// the entropy model are reproducible independent of BLAS kernels.
  Tensor<double> forward_deterministic(const Tensor<double>& z_hat) const;

 private:
  TransformConfig cfg_;
  nn::ConvTranspose2d<T>* up1_ = nullptr;
  nn::ConvTranspose2d<T>* up2_ = nullptr;
  nn::Conv2d<T>* out_ = nullptr;
  T slope_ = T(0.01);
};

/// Clamps a reconstruction into [0, 1].
template <typename T>
void clamp_unit(Tensor<T>& x);

}  // namespace ccpc
