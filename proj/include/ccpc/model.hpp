// SPDX-License-Identifier: Apache-2.0
//
// Full compression model: transforms, hyperprior, two context models, global
// prediction and the two parameter heads, plus RD loss and checkpoints.
#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "ccpc/causal_context.hpp"
#include "ccpc/entropy_model.hpp"
#include "ccpc/global_prediction.hpp"
#include "ccpc/transforms.hpp"

namespace ccpc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelConfig {
  TransformConfig transform;
  global::GlobalConfig global;
  int mixtures = entropy::kDefaultMixtures;
  int context_channels = 0;  ///< 0 means 2 * M
  int global_width = 0;      ///< 0 means 2 * M
  int quality_id = 0;

  int split() const { return transform.split(); }
  int latent() const { return transform.M; }
  /// False for the ratio = 1 model, which has a single group and only f_c1.
  bool grouped() const { return split() < transform.M; }
  bool use_global() const { return grouped() && global.enabled; }
  int ctx() const {
    return context_channels > 0 ? context_channels : 2 * transform.M;
  }
  int gwidth() const { return global_width > 0 ? global_width : 2 * transform.M; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Parses "key = value" lines ('#' starts a comment). Unknown keys throw.
/// Keys: N, M, group_ratio, F, attention_groups, context_channels,
/// global_width, mixtures, global, k, mode, distance, quality_id.
ModelConfig parse_config(const std::string& text);
ModelConfig load_config_file(const std::string& path);
std::string format_config(const ModelConfig& cfg);

enum class Metric { kMse, kMsSsim };
Metric parse_metric(const std::string& s);

struct LossReport {
  double loss = 0;
  double bpp = 0;  ///< rate term, noisy latents
  double bits_y1 = 0, bits_y2 = 0, bits_z = 0;
  double mse = 0;
  double ms_ssim = 0;  ///< only filled for the ms-ssim metric
  double distortion = 0;
};

template <typename T>
class CompressionModel {
 public:
  CompressionModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  AnalysisTransform<T>& analysis() { return *g_a_; }
  SynthesisTransform<T>& synthesis() { return *g_s_; }
  HyperAnalysis<T>& hyper_analysis() { return *h_a_; }
  HyperSynthesis<T>& hyper_synthesis() { return *h_s_; }
  entropy::FactorizedPrior<T>& prior() { return *prior_; }
  context::MaskedConv<T>& context1() { return *ctx1_; }
  /// Null for the ungrouped model.
  context::MaskedConv<T>* context2() { return ctx2_.get(); }
  global::GlobalPrediction<T>* global_prediction() { return glob_.get(); }
  entropy::ParamHead<T>& head1() { return *head1_; }
  entropy::ParamHead<T>* head2() { return head2_.get(); }

  const AnalysisTransform<T>& analysis() const { return *g_a_; }
  const SynthesisTransform<T>& synthesis() const { return *g_s_; }
  const HyperAnalysis<T>& hyper_analysis() const { return *h_a_; }
  const HyperSynthesis<T>& hyper_synthesis() const { return *h_s_; }
  const entropy::FactorizedPrior<T>& prior() const { return *prior_; }
  const context::MaskedConv<T>& context1() const { return *ctx1_; }
  const context::MaskedConv<T>* context2() const { return ctx2_.get(); }
  const global::GlobalPrediction<T>* global_prediction() const {
    return glob_.get();
  }
  const entropy::ParamHead<T>& head1() const { return *head1_; }
  const entropy::ParamHead<T>* head2() const { return head2_.get(); }

  /// Every trainable parameter with a stable dotted name.
  std::vector<nn::NamedParam<T>> parameters();
  void zero_grad();
  /// Re-zeroes masked context taps.
  void apply_masks();
  /// Switches top-k / dense / k at evaluation time (weights are shared).
  void set_global_config(const global::GlobalConfig& g);

  /// L = bits / (B H W) + lambda * d(x, x_hat) on a batch x in [0, 1]. The
  /// rate uses y + u and z + u with u drawn from `noise_seed`; contexts,
  /// global prediction, hyper synthesis and the decoder see rounded values
  /// with straight-through gradients. With `backward` the gradients are
  /// accumulated into the parameters. Throws NonFiniteError on a non-finite
  /// loss (parameters untouched).
  LossReport rd_loss(const Tensor<T>& x, double lambda, Metric metric,
                     std::uint64_t noise_seed, bool backward);

  /// Drops cached activations.
  void clear_cache();

  void save(const std::string& path);
  static std::unique_ptr<CompressionModel> load(const std::string& path);

 private:
  ModelConfig cfg_;
  std::unique_ptr<AnalysisTransform<T>> g_a_;
  std::unique_ptr<SynthesisTransform<T>> g_s_;
  std::unique_ptr<HyperAnalysis<T>> h_a_;
  std::unique_ptr<HyperSynthesis<T>> h_s_;
  std::unique_ptr<entropy::FactorizedPrior<T>> prior_;
  std::unique_ptr<context::MaskedConv<T>> ctx1_;
  std::unique_ptr<context::MaskedConv<T>> ctx2_;
  std::unique_ptr<global::GlobalPrediction<T>> glob_;
  std::unique_ptr<entropy::ParamHead<T>> head1_;
  std::unique_ptr<entropy::ParamHead<T>> head2_;
};

/// Round half away from zero.
template <typename T>
Tensor<T> round_tensor(const Tensor<T>& x);

}  // namespace ccpc
