// SPDX-License-Identifier: Apache-2.0
//
// Decoder-side global context: every position picks the k most similar
// earlier positions (by their first-group vectors), passes those positions'
// second-group vectors through a shared MLP and averages the results.
#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ccpc/layers.hpp"

namespace ccpc::global {

enum class Distance { kNegL2, kCosine };
enum class Mode { kTopK, kDense };

struct GlobalConfig {
  bool enabled = true;
  Mode mode = Mode::kTopK;
  int k = 4;
  Distance distance = Distance::kNegL2;

  /// Reference budget passed to the selector; -1 means every causal position.
  int budget() const { return mode == Mode::kDense ? -1 : k; }
  void validate() const;
};

Distance parse_distance(const std::string& s);
Mode parse_mode(const std::string& s);
std::string to_string(Distance d);
std::string to_string(Mode m);

/// Similarity of two first-group vectors; larger is more similar.
/// kNegL2: -sum (a_c - b_c)^2. kCosine: a.b / (|a||b|), 0 when either is 0.
double similarity(std::span<const double> a, std::span<const double> b,
                  Distance d);

/// scores(m, n) for m < n, -inf elsewhere. Positions are raster indices.
struct CausalCorrelationMatrix {
  static constexpr double kMasked = -std::numeric_limits<double>::infinity();

  int positions = 0;
  std::vector<double> scores;  // row-major positions x positions

  double at(int m, int n) const {
    return scores[static_cast<std::size_t>(m) * positions + n];
  }
};

/// `group1` holds `positions` rows of `s` values (raster order).
CausalCorrelationMatrix causal_correlation(std::span<const double> group1,
                                           int positions, int s,
                                           Distance d = Distance::kNegL2);

/// Indices of the best min(k, n) entries of `scores` (candidate m has score
/// scores[m]), ordered by score descending then index ascending. k < 0
/// selects every candidate in that order.
std::vector<int> select_references(std::span<const double> scores, int k);

struct ReferenceSet {
  int k = 0;  ///< -1 for dense
  std::vector<std::vector<int>> indices;
};

ReferenceSet topk_references(const CausalCorrelationMatrix& corr, int k);

/// Shared per-vector MLP, (M - s) -> width -> width -> width with ReLU after
/// the two hidden layers. Applied per position as 1x1 convolutions.
template <typename T>
class GlobalMlp final : public nn::Layer<T> {
 public:
  GlobalMlp(int in_channels, int width, nn::Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<nn::NamedParam<T>>& out) override;
  void clear_cache() override { net_.clear_cache(); }

  int in_channels() const { return in_; }
  int width() const { return width_; }
  /// Deterministic double evaluation of one vector.
  void eval_point(std::span<const double> in, std::span<double> out) const;

 private:
  int in_, width_;
  nn::Sequential<T> net_;
  nn::Conv2d<T>* l0_;
  nn::Conv2d<T>* l1_;
  nn::Conv2d<T>* l2_;
};

/// Mean of the `fused` rows listed in `refs` (summed in list order), or zeros
/// for an empty list. `fused` rows have `width` values.
void average_point(std::span<const int> refs, std::span<const double> fused,
                   int width, std::span<double> out);

/// c3 for every position of one image: mean of `fused` rows over each
/// position's references, summed in selection order; zero for no refs.
/// `fused` is positions x width. Result is 1 x width x h x w.
Tensor<double> average_references(const ReferenceSet& refs,
                                  std::span<const double> fused, int width,
                                  int h, int w);

/// gather_and_fuse on decoded second-group values (1 x (M-s) x h x w).
template <typename T>
Tensor<double> gather_and_fuse(const ReferenceSet& refs,
                               const Tensor<double>& group2,
                               const GlobalMlp<T>& mlp);

/// gather_and_fuse with every causal position as a reference.
template <typename T>
Tensor<double> dense_mode(const CausalCorrelationMatrix& corr,
                          const Tensor<double>& group2,
                          const GlobalMlp<T>& mlp);

/// Raster-major rows of the first `s` channels of sample `n`.
template <typename T>
std::vector<double> group1_rows(const Tensor<T>& y_hat, int n, int s);

/// Decoder-side state. Each push() scores the new first-group vector against
/// all earlier ones (one new column of the correlation matrix), returns the
/// selected references and then stores the vector.
class IncrementalReferences {
 public:
  IncrementalReferences(int s, const GlobalConfig& cfg);
  std::vector<int> push(std::span<const double> group1);
  int size() const { return count_; }

 private:
  int s_;
  GlobalConfig cfg_;
  int count_ = 0;
  std::vector<double> rows_;
  std::vector<double> scratch_;
};

/// Training-time c3: per sample, references from the (integer) first-group
/// channels of y_hat, MLP over the second group, averaged. Gradients flow to
/// the second-group channels and the MLP; selection itself is constant.
template <typename T>
class GlobalPrediction final : public nn::Layer<T> {
 public:
  GlobalPrediction(int latent_channels, int split, int width,
                   const GlobalConfig& cfg, nn::Rng& rng);

  Tensor<T> forward(const Tensor<T>& y_hat) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<nn::NamedParam<T>>& out) override;
  void clear_cache() override;

  const GlobalConfig& config() const { return cfg_; }
  void set_config(const GlobalConfig& cfg);
  GlobalMlp<T>& mlp() { return mlp_; }
  const GlobalMlp<T>& mlp() const { return mlp_; }
  int split() const { return s_; }
  int width() const { return mlp_.width(); }

 private:
  int m_, s_;
  GlobalConfig cfg_;
  GlobalMlp<T> mlp_;
  std::vector<ReferenceSet> refs_;
  Shape in_shape_;
};

}  // namespace ccpc::global
