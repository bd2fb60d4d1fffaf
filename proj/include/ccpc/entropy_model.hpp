// SPDX-License-Identifier: Apache-2.0
//
// Discretized Gaussian-mixture likelihoods for the latents, a factorized
// density for the hyper-latents, and the per-position parameter heads.
#pragma once

#include <span>
#include <vector>

#include "ccpc/layers.hpp"

namespace ccpc::entropy {

inline constexpr double kSigmaMin = 0.01;
/// Lower clamp applied to every symbol probability (2^-15).
inline constexpr double kProbMin = 1.0 / 32768.0;
inline constexpr int kDefaultMixtures = 3;

double normal_cdf(double x);
double normal_pdf(double x);

/// Mixture weights, means and scales for a B x C x H x W block of symbols.
/// Element e = ((n * C + c) * H + y) * W + x owns entries [e*K, e*K + K).
struct GmmParams {
  int n = 0, c = 0, h = 0, w = 0;
  int mixtures = kDefaultMixtures;
  std::vector<double> pi, mu, sigma;

  GmmParams() = default;
  GmmParams(int n, int c, int h, int w, int mixtures);
  std::size_t elements() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * this->c + c) * h + y) * w + x;
  }
  /// Throws InvalidParamsError if sigma < kSigmaMin, pi < 0 or the weights
  /// of any element do not sum to one within 1e-5.
  void validate() const;
};

/// Unclamped mass of integer symbol `y` under one element's mixture.
double gmm_mass(double y, std::span<const double> pi,
                std::span<const double> mu, std::span<const double> sigma);

/// P(y_hat) per element, clamped below at kProbMin. `y_hat` has one value
/// per element of `p`.
std::vector<double> discrete_gmm_likelihood(std::span<const double> y_hat,
                                            const GmmParams& p);

/// Gradients of total bits with respect to every entry of the parameters
/// and to the symbol values.
struct GmmGrad {
  std::vector<double> d_pi, d_mu, d_sigma, d_y;
};

/// Total bits -sum log2 max(P, kProbMin) at (possibly non-integer) values
/// `y`. When `grad` is given it receives d(bits)/d{pi, mu, sigma, y}; clamped
/// elements pass the gradient computed at the clamp value.
double gmm_bits(std::span<const double> y, const GmmParams& p,
                GmmGrad* grad = nullptr);

// Raw head outputs use channel index (kind * K + i) * C + c with kind 0 for
// weight logits, 1 for means and 2 for log-scales.

/// Maps one position's raw head output (3 * K * C values) to params.
/// pi via softmax, sigma = kSigmaMin + exp(raw) (raw clamped to [-30, 12]).
void gmm_point_from_raw(std::span<const double> raw, int channels,
                        int mixtures, std::span<double> pi,
                        std::span<double> mu, std::span<double> sigma);

template <typename T>
GmmParams gmm_from_raw(const Tensor<T>& raw, int channels, int mixtures);

/// Back-propagates parameter gradients to the raw head output.
template <typename T>
Tensor<T> gmm_raw_backward(const Tensor<T>& raw, const GmmParams& p,
                           const GmmGrad& grad);

/// Per-channel flexible univariate density (1 -> 3 -> 3 -> 3 -> 1 monotone
/// network with softplus-constrained matrices) for the hyper-latents.
template <typename T>
class FactorizedPrior {
 public:
  static constexpr int kLayers = 4;

  FactorizedPrior(int channels, nn::Rng& rng);

  int channels() const { return channels_; }

  /// Logit of the modeled CDF at x for one channel (nondecreasing in x).
  double logits(int channel, double x) const;
  double cdf(int channel, double x) const;
  /// P(z) = CDF(z + 1/2) - CDF(z - 1/2), clamped at kProbMin.
  double likelihood(int channel, double z) const;

  /// Probabilities for every element of z (B x C x h x w).
  std::vector<double> likelihoods(const Tensor<T>& z) const;

  /// Total bits of z. With `grad_z`, accumulates parameter gradients and
  /// writes d(bits)/dz scaled by `scale`.
  double bits(const Tensor<T>& z, Tensor<T>* grad_z = nullptr,
              double scale = 1.0);

  void collect(const std::string& prefix, std::vector<nn::NamedParam<T>>& out);

 private:
  double logits_backward(int channel, double x, double grad_logit);

  int channels_;
  std::vector<nn::Param<T>> matrices_;  // (C, d_out, d_in, 1)
  std::vector<nn::Param<T>> biases_;    // (C, d_out, 1, 1)
  std::vector<nn::Param<T>> factors_;   // (C, d_out, 1, 1), last layer unused
};

/// Per-position parameter estimator: 1x1 conv stack with one residual
/// block. Consumes [hyper features, contexts...] and emits raw GMM params.
template <typename T>
class ParamHead final : public nn::Layer<T> {
 public:
  ParamHead(int in_channels, int out_symbols, int mixtures, nn::Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<nn::NamedParam<T>>& out) override;
  void clear_cache() override;

  int in_channels() const { return in_; }
  int out_symbols() const { return symbols_; }
  int mixtures() const { return mixtures_; }
  int raw_channels() const { return 3 * mixtures_ * symbols_; }

  /// Deterministic double evaluation for a single position.
  void eval_point(std::span<const double> in, std::span<double> raw) const;

 private:
  int in_, hidden_, symbols_, mixtures_;
  nn::Conv2d<T> in_conv_, res_a_, res_b_, out_conv_;
  nn::LeakyRelu<T> act0_, act1_, act2_;
};

/// Params for the s first-group channels from [features, c1].
template <typename T>
GmmParams estimate_params_group1(ParamHead<T>& head, const Tensor<T>& features,
                                 const Tensor<T>& c1);

/// Params for the M - s second-group channels from [features, c2, c3];
/// `c3` may be null when global prediction is disabled.
template <typename T>
GmmParams estimate_params_group2(ParamHead<T>& head, const Tensor<T>& features,
                                 const Tensor<T>& c2, const Tensor<T>* c3);

struct RateReport {
  double bits_y_group1 = 0;
  double bits_y_group2 = 0;
  double bits_z = 0;
  double bpp = 0;

  double total_bits() const { return bits_y_group1 + bits_y_group2 + bits_z; }
  /// Share of latent bits spent on the first channel group.
  double group1_share() const;
};

/// Bits from symbol probabilities (-sum log2 P); bpp uses the original,
/// pre-padding image area.
RateReport rate_bits(std::span<const double> p_group1,
                     std::span<const double> p_group2,
                     std::span<const double> p_z, long long pixels);

}  // namespace ccpc::entropy
