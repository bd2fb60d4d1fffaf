// SPDX-License-Identifier: Apache-2.0
#include "ccpc/transforms.hpp"

#include <cmath>

namespace ccpc {

int TransformConfig::split() const {
  return static_cast<int>(std::lround(M * group_ratio));
}

void TransformConfig::validate() const {
  if (N < 1) throw InvalidParamsError("N must be >= 1");
  if (M < 2) throw InvalidParamsError("M must be >= 2");
  if (!(group_ratio > 0.0 && group_ratio <= 1.0)) {
    throw InvalidParamsError("group_ratio must lie in (0, 1]");
  }
  const int s = split();
  if (s < 1 || s > M || (group_ratio < 1.0 && s == M)) {
    throw InvalidParamsError("group split s=" + std::to_string(s) +
                             " out of range for M=" + std::to_string(M));
  }
  if (attention_groups < 0 || attention_groups > 2) {
    throw InvalidParamsError("attention_groups must be 0, 1 or 2");
  }
  if (attention_groups > 0 &&
      (N % attention_groups != 0 || M % attention_groups != 0)) {
    throw InvalidParamsError("N and M must divide into attention groups");
  }
  if (F < 0) throw InvalidParamsError("F must be >= 0");
}

namespace {

template <typename T>
void add_attention(nn::Sequential<T>& seq, const std::string& name,
                   int channels, int groups, nn::Rng& rng) {
  if (groups == 0) return;
  seq.template emplace<nn::GroupSeparatedAttention<T>>(name, channels, groups,
                                                       rng);
}

void require_multiple(const Shape& s, int multiple, const char* what) {
  if (s.h % multiple != 0 || s.w % multiple != 0 || s.h == 0 || s.w == 0) {
    throw DimensionError(std::string(what) + ": spatial size " + s.str() +
                         " is not a multiple of " + std::to_string(multiple));
  }
}

}  // namespace

template <typename T>
AnalysisTransform<T>::AnalysisTransform(const TransformConfig& cfg,
                                        nn::Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const int n = cfg.N;
  this->template emplace<nn::Conv2d<T>>("conv0", 3, n, 5, 2, 2, rng);
  this->template emplace<nn::Gdn<T>>("gdn0", n, false);
  this->template emplace<nn::Conv2d<T>>("conv1", n, n, 5, 2, 2, rng);
  this->template emplace<nn::Gdn<T>>("gdn1", n, false);
  add_attention(*this, "attn1", n, cfg.attention_groups, rng);
  this->template emplace<nn::Conv2d<T>>("conv2", n, n, 5, 2, 2, rng);
  this->template emplace<nn::Gdn<T>>("gdn2", n, false);
  this->template emplace<nn::Conv2d<T>>("conv3", n, cfg.M, 5, 2, 2, rng);
  add_attention(*this, "attn3", cfg.M, cfg.attention_groups, rng);
}

template <typename T>
Tensor<T> AnalysisTransform<T>::forward(const Tensor<T>& x) {
  if (x.c() != 3) throw DimensionError("analysis input " + x.shape().str());
  require_multiple(x.shape(), kPadMultiple, "analysis transform");
  return nn::Sequential<T>::forward(x);
}

template <typename T>
SynthesisTransform<T>::SynthesisTransform(const TransformConfig& cfg,
                                          nn::Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const int n = cfg.N;
  add_attention(*this, "attn0", cfg.M, cfg.attention_groups, rng);
  this->template emplace<nn::ConvTranspose2d<T>>("deconv0", cfg.M, n, 5, 2, 2,
                                                 1, rng);
  this->template emplace<nn::Gdn<T>>("igdn0", n, true);
  this->template emplace<nn::ConvTranspose2d<T>>("deconv1", n, n, 5, 2, 2, 1,
                                                 rng);
  this->template emplace<nn::Gdn<T>>("igdn1", n, true);
  add_attention(*this, "attn2", n, cfg.attention_groups, rng);
  this->template emplace<nn::ConvTranspose2d<T>>("deconv2", n, n, 5, 2, 2, 1,
                                                 rng);
  this->template emplace<nn::Gdn<T>>("igdn2", n, true);
  this->template emplace<nn::ConvTranspose2d<T>>("deconv3", n, 3, 5, 2, 2, 1,
                                                 rng);
}

template <typename T>
Tensor<T> SynthesisTransform<T>::forward(const Tensor<T>& y_hat) {
  if (y_hat.c() != cfg_.M) {
    throw DimensionError("synthesis expects " + std::to_string(cfg_.M) +
                         " channels, got " + y_hat.shape().str());
  }
  return nn::Sequential<T>::forward(y_hat);
}

template <typename T>
HyperAnalysis<T>::HyperAnalysis(const TransformConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const int n = cfg.N;
  this->template emplace<nn::Conv2d<T>>("conv0", cfg.M, n, 3, 1, 1, rng);
  this->template emplace<nn::LeakyRelu<T>>("act0");
  this->template emplace<nn::Conv2d<T>>("conv1", n, n, 5, 2, 2, rng);
  this->template emplace<nn::LeakyRelu<T>>("act1");
  this->template emplace<nn::Conv2d<T>>("conv2", n, n, 5, 2, 2, rng);
}

template <typename T>
Tensor<T> HyperAnalysis<T>::forward(const Tensor<T>& y) {
  if (y.c() != cfg_.M) {
    throw DimensionError("hyper analysis expects " + std::to_string(cfg_.M) +
                         " channels, got " + y.shape().str());
  }
  require_multiple(y.shape(), 4, "hyper analysis");
  return nn::Sequential<T>::forward(y);
}

template <typename T>
HyperSynthesis<T>::HyperSynthesis(const TransformConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const int n = cfg.N;
  const int mid = (3 * n + 1) / 2;
  up1_ = &this->template emplace<nn::ConvTranspose2d<T>>("deconv0", n, n, 5, 2,
                                                         2, 1, rng);
  this->template emplace<nn::LeakyRelu<T>>("act0", slope_);
  up2_ = &this->template emplace<nn::ConvTranspose2d<T>>("deconv1", n, mid, 5,
                                                         2, 2, 1, rng);
  this->template emplace<nn::LeakyRelu<T>>("act1", slope_);
  out_ = &this->template emplace<nn::Conv2d<T>>("conv2", mid, cfg.features(),
                                                3, 1, 1, rng);
}

template <typename T>
Tensor<T> HyperSynthesis<T>::forward(const Tensor<T>& z_hat) {
  if (z_hat.c() != cfg_.N) {
    throw DimensionError("hyper synthesis expects " + std::to_string(cfg_.N) +
                         " channels, got " + z_hat.shape().str());
  }
  return nn::Sequential<T>::forward(z_hat);
}

namespace {

template <typename T>
Tensor<double> deconv_reference(const nn::ConvTranspose2d<T>& layer,
                                const Tensor<double>& x) {
  const int k = layer.kernel(), s = layer.stride(), p = layer.pad();
  const int cin = layer.in_channels(), cout = layer.out_channels();
  const int oh = (x.h() - 1) * s - 2 * p + k + layer.output_pad();
  const int ow = (x.w() - 1) * s - 2 * p + k + layer.output_pad();
  const auto& w = layer.weight().value;
  const auto& b = layer.bias().value;
  Tensor<double> y(x.n(), cout, oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < cout; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = static_cast<double>(b[o]);
          for (int i = 0; i < cin; ++i) {
            for (int ky = 0; ky < k; ++ky) {
              const int ty = oy + p - ky;
              if (ty < 0 || ty % s != 0) continue;
              const int iy = ty / s;
              if (iy >= x.h()) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int tx = ox + p - kx;
                if (tx < 0 || tx % s != 0) continue;
                const int ix = tx / s;
                if (ix >= x.w()) continue;
                acc += static_cast<double>(
                           w[((static_cast<std::size_t>(i) * cout + o) * k +
                              ky) * k + kx]) *
                       x.at(n, i, iy, ix);
              }
            }
          }
          y.at(n, o, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<double> conv_reference(const nn::Conv2d<T>& layer,
                              const Tensor<double>& x) {
  const int k = layer.kernel(), s = layer.stride(), p = layer.pad();
  const int cin = layer.in_channels(), cout = layer.out_channels();
  const int oh = (x.h() + 2 * p - k) / s + 1;
  const int ow = (x.w() + 2 * p - k) / s + 1;
  const auto& w = layer.weight().value;
  const auto& b = layer.bias().value;
  Tensor<double> y(x.n(), cout, oh, ow);
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < cout; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = static_cast<double>(b[o]);
          for (int i = 0; i < cin; ++i) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * s - p + ky;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * s - p + kx;
                if (ix < 0 || ix >= x.w()) continue;
                acc += static_cast<double>(
                           w[((static_cast<std::size_t>(o) * cin + i) * k +
                              ky) * k + kx]) *
                       x.at(n, i, iy, ix);
              }
            }
          }
          y.at(n, o, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

void leaky_inplace(Tensor<double>& x, double slope) {
  for (auto& v : x.vec()) v = v > 0.0 ? v : slope * v;
}

}  // namespace

template <typename T>
Tensor<double> HyperSynthesis<T>::forward_deterministic(
    const Tensor<double>& z_hat) const {
  if (z_hat.c() != cfg_.N) {
    throw DimensionError("hyper synthesis expects " + std::to_string(cfg_.N) +
                         " channels, got " + z_hat.shape().str());
  }
  const double slope = static_cast<double>(slope_);
  Tensor<double> h = deconv_reference(*up1_, z_hat);
  leaky_inplace(h, slope);
  h = deconv_reference(*up2_, h);
  leaky_inplace(h, slope);
  return conv_reference(*out_, h);
}

template <typename T>
void clamp_unit(Tensor<T>& x) {
  for (auto& v : x.vec()) v = std::clamp(v, T(0), T(1));
}

template class AnalysisTransform<float>;
template class AnalysisTransform<double>;
template class SynthesisTransform<float>;
template class SynthesisTransform<double>;
template class HyperAnalysis<float>;
template class HyperAnalysis<double>;
template class HyperSynthesis<float>;
template class HyperSynthesis<double>;
template void clamp_unit<float>(Tensor<float>&);
template void clamp_unit<double>(Tensor<double>&);

}  // namespace ccpc
