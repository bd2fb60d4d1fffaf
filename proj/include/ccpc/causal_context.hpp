// SPDX-License-Identifier: Apache-2.0
//
// Masked 5x5 convolutions over the quantized latents. The standard mask sees
// strictly earlier raster positions; the improved mask also sees the first
// channel group at the current position.
#pragma once

#include <span>
#include <utility>

#include "ccpc/layers.hpp"

namespace ccpc::context {

enum class MaskMode { kStandard, kImproved };

struct MaskSpec {
  int kernel = 5;
  MaskMode mode = MaskMode::kStandard;
  int split = 0;  ///< s, only read in improved mode

  /// Throws InvalidParamsError for an even/non-positive kernel or, in
  /// improved mode, a split outside (0, in_channels).
  void validate(int in_channels) const;
  /// True when tap (ky, kx) reads input channel `c` under this mask.
  bool admits(int ky, int kx, int c) const;
};

/// 0/1 mask of shape (out, in, k, k) for `spec`. Depends on the spec only.
template <typename T>
Tensor<T> build_mask(const MaskSpec& spec, int in_channels, int out_channels);

/// Convolution whose weights are restricted by a MaskSpec. Training uses the
/// full-frame forward; the serial decoder uses eval_point, which only visits
/// the admitted taps inside the image.
template <typename T>
class MaskedConv final : public nn::Layer<T> {
 public:
  MaskedConv(int in_channels, int out_channels, const MaskSpec& spec,
             nn::Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix,
               std::vector<nn::NamedParam<T>>& out) override;
  void clear_cache() override { conv_.clear_cache(); }

  const MaskSpec& spec() const { return spec_; }
  int in_channels() const { return conv_.in_channels(); }
  int out_channels() const { return conv_.out_channels(); }
  nn::Conv2d<T>& conv() { return conv_; }
  const nn::Conv2d<T>& conv() const { return conv_; }
  /// Re-zeroes masked taps (call after an optimizer step or a load).
  void apply_mask() { conv_.apply_mask(); }

  /// Context at (py, px) of sample 0 of `y_hat`, in double with a fixed
  /// summation order: bias, then taps in raster order, then channels.
  void eval_point(const Tensor<double>& y_hat, int py, int px,
                  std::span<double> out) const;

 private:
  MaskSpec spec_;
  nn::Conv2d<T> conv_;
  // (ky, kx, channel_end) for each tap the mask admits.
  struct Tap {
    int dy, dx, channels;
  };
  std::vector<Tap> taps_;
};

/// Full-frame f_c1. Throws if the layer is not in standard mode.
template <typename T>
Tensor<T> masked_conv_standard(const Tensor<T>& y_hat, MaskedConv<T>& conv);

/// Full-frame f_c2. Throws if the layer is not in improved mode.
template <typename T>
Tensor<T> masked_conv_improved(const Tensor<T>& y_hat, MaskedConv<T>& conv);

/// (channels [0, s), channels [s, M)).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y_hat, int s);

template <typename T>
Tensor<T> merge_channels(const Tensor<T>& group1, const Tensor<T>& group2);

}  // namespace ccpc::context
