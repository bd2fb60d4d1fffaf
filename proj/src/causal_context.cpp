// SPDX-License-Identifier: Apache-2.0
#include "ccpc/causal_context.hpp"

namespace ccpc::context {

void MaskSpec::validate(int in_channels) const {
  if (kernel < 1 || kernel % 2 == 0) {
    throw InvalidParamsError("mask kernel must be odd and positive, got " +
                             std::to_string(kernel));
  }
  if (mode == MaskMode::kImproved && (split <= 0 || split >= in_channels)) {
    throw InvalidParamsError("improved mask split " + std::to_string(split) +
                             " outside (0, " + std::to_string(in_channels) +
                             ")");
  }
}

bool MaskSpec::admits(int ky, int kx, int c) const {
  const int mid = kernel / 2;
  if (ky < mid || (ky == mid && kx < mid)) return true;
  if (ky == mid && kx == mid) return mode == MaskMode::kImproved && c < split;
  return false;
}

template <typename T>
Tensor<T> build_mask(const MaskSpec& spec, int in_channels, int out_channels) {
  spec.validate(in_channels);
  const int k = spec.kernel;
  Tensor<T> mask(out_channels, in_channels, k, k);
  for (int o = 0; o < out_channels; ++o) {
    for (int c = 0; c < in_channels; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          mask.at(o, c, ky, kx) = spec.admits(ky, kx, c) ? T(1) : T(0);
        }
      }
    }
  }
  return mask;
}

template <typename T>
MaskedConv<T>::MaskedConv(int in_channels, int out_channels,
                          const MaskSpec& spec, nn::Rng& rng)
    : spec_(spec),
      conv_(in_channels, out_channels, spec.kernel, 1, spec.kernel / 2, rng) {
  conv_.set_mask(build_mask<T>(spec, in_channels, out_channels));
  const int k = spec.kernel, mid = k / 2;
  for (int ky = 0; ky < k; ++ky) {
    for (int kx = 0; kx < k; ++kx) {
      int channels = 0;
      while (channels < in_channels && spec.admits(ky, kx, channels)) ++channels;
      if (channels > 0) taps_.push_back({ky - mid, kx - mid, channels});
    }
  }
}

template <typename T>
Tensor<T> MaskedConv<T>::forward(const Tensor<T>& x) {
  return conv_.forward(x);
}

template <typename T>
Tensor<T> MaskedConv<T>::backward(const Tensor<T>& grad_out) {
  return conv_.backward(grad_out);
}

template <typename T>
void MaskedConv<T>::collect(const std::string& prefix,
                            std::vector<nn::NamedParam<T>>& out) {
  conv_.collect(prefix, out);
}

template <typename T>
void MaskedConv<T>::eval_point(const Tensor<double>& y_hat, int py, int px,
                               std::span<double> out) const {
  const int cin = conv_.in_channels(), cout = conv_.out_channels();
  if (y_hat.c() != cin || static_cast<int>(out.size()) != cout) {
    throw DimensionError("masked conv point evaluation on " +
                         y_hat.shape().str());
  }
  const int k = spec_.kernel, mid = k / 2;
  const T* w = conv_.weight().value.data();
  const T* b = conv_.bias().value.data();
  for (int o = 0; o < cout; ++o) out[o] = static_cast<double>(b[o]);
  for (const Tap& tap : taps_) {
    const int iy = py + tap.dy, ix = px + tap.dx;
    if (iy < 0 || iy >= y_hat.h() || ix < 0 || ix >= y_hat.w()) continue;
    const int ky = tap.dy + mid, kx = tap.dx + mid;
    for (int o = 0; o < cout; ++o) {
      double acc = out[o];
      for (int c = 0; c < tap.channels; ++c) {
        acc += static_cast<double>(
                   w[((static_cast<std::size_t>(o) * cin + c) * k + ky) * k +
                     kx]) *
               y_hat.at(0, c, iy, ix);
      }
      out[o] = acc;
    }
  }
}

template <typename T>
Tensor<T> masked_conv_standard(const Tensor<T>& y_hat, MaskedConv<T>& conv) {
  if (conv.spec().mode != MaskMode::kStandard) {
    throw InvalidParamsError("masked_conv_standard needs a standard mask");
  }
  return conv.forward(y_hat);
}

template <typename T>
Tensor<T> masked_conv_improved(const Tensor<T>& y_hat, MaskedConv<T>& conv) {
  if (conv.spec().mode != MaskMode::kImproved) {
    throw InvalidParamsError("masked_conv_improved needs an improved mask");
  }
  return conv.forward(y_hat);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y_hat, int s) {
  if (s <= 0 || s > y_hat.c()) {
    throw InvalidParamsError("split " + std::to_string(s) + " for " +
                             y_hat.shape().str());
  }
  return {slice_channels(y_hat, 0, s), slice_channels(y_hat, s, y_hat.c())};
}

template <typename T>
Tensor<T> merge_channels(const Tensor<T>& group1, const Tensor<T>& group2) {
  const Tensor<T>* parts[] = {&group1, &group2};
  return concat_channels<T>(parts);
}

#define CCPC_INSTANTIATE(T)                                                  \
  template Tensor<T> build_mask<T>(const MaskSpec&, int, int);               \
  template class MaskedConv<T>;                                              \
  template Tensor<T> masked_conv_standard<T>(const Tensor<T>&,               \
                                             MaskedConv<T>&);                \
  template Tensor<T> masked_conv_improved<T>(const Tensor<T>&,               \
                                             MaskedConv<T>&);                \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(                \
      const Tensor<T>&, int);                                                \
  template Tensor<T> merge_channels<T>(const Tensor<T>&, const Tensor<T>&);

CCPC_INSTANTIATE(float)
CCPC_INSTANTIATE(double)

}  // namespace ccpc::context
