// SPDX-License-Identifier: Apache-2.0
#include "ccpc/entropy_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace ccpc::entropy {

namespace {

constexpr double kLn2 = std::numbers::ln2;
constexpr double kRawScaleLo = -30.0;
constexpr double kRawScaleHi = 12.0;
constexpr std::array<int, FactorizedPrior<float>::kLayers + 1> kDims = {1, 3, 3,
                                                                        3, 1};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Mass of [y - 1/2, y + 1/2] under N(mu, sigma^2), evaluated on the side of
/// the mean that avoids cancellation, plus its partial derivatives.
struct BinMass {
  double mass;
  double d_y;
  double d_mu;
  double d_sigma;
};

BinMass bin_mass(double y, double mu, double sigma) {
  const double upper = (y + 0.5 - mu) / sigma;
  const double lower = (y - 0.5 - mu) / sigma;
  double mass;
  if (y - mu > 0) {
    mass = 0.5 * std::erfc(lower * std::numbers::sqrt2 / 2) -
           0.5 * std::erfc(upper * std::numbers::sqrt2 / 2);
  } else {
    mass = 0.5 * std::erfc(-upper * std::numbers::sqrt2 / 2) -
           0.5 * std::erfc(-lower * std::numbers::sqrt2 / 2);
  }
  const double pu = normal_pdf(upper);
  const double pl = normal_pdf(lower);
  return {mass, (pu - pl) / sigma, -(pu - pl) / sigma,
          (-upper * pu + lower * pl) / sigma};
}

}  // namespace

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2);
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

GmmParams::GmmParams(int n, int c, int h, int w, int mixtures)
    : n(n), c(c), h(h), w(w), mixtures(mixtures) {
  const std::size_t total = elements() * mixtures;
  pi.assign(total, 0.0);
  mu.assign(total, 0.0);
  sigma.assign(total, 1.0);
}

void GmmParams::validate() const {
  const std::size_t k = static_cast<std::size_t>(mixtures);
  if (mixtures < 1 || pi.size() != elements() * k || mu.size() != pi.size() ||
      sigma.size() != pi.size()) {
    throw InvalidParamsError("gmm parameter array sizes");
  }
  for (std::size_t e = 0; e < elements(); ++e) {
    double total = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const double p = pi[e * k + i];
      if (!(p >= 0)) throw InvalidParamsError("negative mixture weight");
      if (!(sigma[e * k + i] >= kSigmaMin)) {
        throw InvalidParamsError("sigma below sigma_min");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw InvalidParamsError("mixture weights do not sum to one");
    }
  }
}

double gmm_mass(double y, std::span<const double> pi,
                std::span<const double> mu, std::span<const double> sigma) {
  double p = 0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    p += pi[i] * bin_mass(y, mu[i], sigma[i]).mass;
  }
  return p;
}

std::vector<double> discrete_gmm_likelihood(std::span<const double> y_hat,
                                            const GmmParams& p) {
  p.validate();
  if (y_hat.size() != p.elements()) {
    throw DimensionError("likelihood: " + std::to_string(y_hat.size()) +
                         " symbols for " + std::to_string(p.elements()) +
                         " parameter sets");
  }
  const std::size_t k = p.mixtures;
  std::vector<double> out(y_hat.size());
  for (std::size_t e = 0; e < out.size(); ++e) {
    const double m = gmm_mass(y_hat[e], std::span(p.pi).subspan(e * k, k),
                              std::span(p.mu).subspan(e * k, k),
                              std::span(p.sigma).subspan(e * k, k));
    out[e] = std::max(m, kProbMin);
  }
  return out;
}

double gmm_bits(std::span<const double> y, const GmmParams& p, GmmGrad* grad) {
  if (y.size() != p.elements()) {
    throw DimensionError("gmm_bits: symbol count does not match parameters");
  }
  const std::size_t k = p.mixtures;
  if (grad) {
    grad->d_pi.assign(p.pi.size(), 0.0);
    grad->d_mu.assign(p.pi.size(), 0.0);
    grad->d_sigma.assign(p.pi.size(), 0.0);
    grad->d_y.assign(y.size(), 0.0);
  }
  double total = 0;
  std::vector<BinMass> bins(k);
  for (std::size_t e = 0; e < y.size(); ++e) {
    double mass = 0;
    for (std::size_t i = 0; i < k; ++i) {
      bins[i] = bin_mass(y[e], p.mu[e * k + i], p.sigma[e * k + i]);
      mass += p.pi[e * k + i] * bins[i].mass;
    }
    const double clamped = std::max(mass, kProbMin);
    total -= std::log2(clamped);
    if (!grad) continue;
    const double d_mass = -1.0 / (clamped * kLn2);
    for (std::size_t i = 0; i < k; ++i) {
      const double w = p.pi[e * k + i];
      grad->d_pi[e * k + i] = d_mass * bins[i].mass;
      grad->d_mu[e * k + i] = d_mass * w * bins[i].d_mu;
      grad->d_sigma[e * k + i] = d_mass * w * bins[i].d_sigma;
      grad->d_y[e] += d_mass * w * bins[i].d_y;
    }
  }
  return total;
}

void gmm_point_from_raw(std::span<const double> raw, int channels,
                        int mixtures, std::span<double> pi,
                        std::span<double> mu, std::span<double> sigma) {
  const int k = mixtures;
  for (int c = 0; c < channels; ++c) {
    double peak = -INFINITY;
    for (int i = 0; i < k; ++i) {
      peak = std::max(peak, raw[static_cast<std::size_t>(i) * channels + c]);
    }
    double norm = 0;
    for (int i = 0; i < k; ++i) {
      const double e =
          std::exp(raw[static_cast<std::size_t>(i) * channels + c] - peak);
      pi[static_cast<std::size_t>(c) * k + i] = e;
      norm += e;
    }
    for (int i = 0; i < k; ++i) {
      pi[static_cast<std::size_t>(c) * k + i] /= norm;
      mu[static_cast<std::size_t>(c) * k + i] =
          raw[static_cast<std::size_t>(k + i) * channels + c];
      const double s = std::clamp(
          raw[static_cast<std::size_t>(2 * k + i) * channels + c], kRawScaleLo,
          kRawScaleHi);
      sigma[static_cast<std::size_t>(c) * k + i] = kSigmaMin + std::exp(s);
    }
  }
}

template <typename T>
GmmParams gmm_from_raw(const Tensor<T>& raw, int channels, int mixtures) {
  if (raw.c() != 3 * mixtures * channels) {
    throw DimensionError("raw head output " + raw.shape().str() +
                         " does not hold " + std::to_string(channels) +
                         " symbols x " + std::to_string(mixtures) +
                         " mixtures");
  }
  GmmParams p(raw.n(), channels, raw.h(), raw.w(), mixtures);
  const std::size_t k = mixtures;
  std::vector<double> point(raw.c());
  std::vector<double> pi(channels * k), mu(pi.size()), sigma(pi.size());
  for (int n = 0; n < raw.n(); ++n) {
    for (int y = 0; y < raw.h(); ++y) {
      for (int x = 0; x < raw.w(); ++x) {
        for (int ch = 0; ch < raw.c(); ++ch) point[ch] = raw.at(n, ch, y, x);
        gmm_point_from_raw(point, channels, mixtures, pi, mu, sigma);
        for (int c = 0; c < channels; ++c) {
          const std::size_t e = p.index(n, c, y, x);
          for (std::size_t i = 0; i < k; ++i) {
            p.pi[e * k + i] = pi[c * k + i];
            p.mu[e * k + i] = mu[c * k + i];
            p.sigma[e * k + i] = sigma[c * k + i];
          }
        }
      }
    }
  }
  return p;
}

template <typename T>
Tensor<T> gmm_raw_backward(const Tensor<T>& raw, const GmmParams& p,
                           const GmmGrad& grad) {
  const int channels = p.c;
  const int k = p.mixtures;
  Tensor<T> g(raw.shape());
  for (int n = 0; n < raw.n(); ++n) {
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < raw.h(); ++y) {
        for (int x = 0; x < raw.w(); ++x) {
          const std::size_t e = p.index(n, c, y, x) * k;
          // softmax: d logit_i = pi_i * (g_i - sum_j pi_j g_j)
          double dot = 0;
          for (int i = 0; i < k; ++i) dot += p.pi[e + i] * grad.d_pi[e + i];
          for (int i = 0; i < k; ++i) {
            g.at(n, i * channels + c, y, x) =
                static_cast<T>(p.pi[e + i] * (grad.d_pi[e + i] - dot));
            g.at(n, (k + i) * channels + c, y, x) =
                static_cast<T>(grad.d_mu[e + i]);
            const double r = raw.at(n, (2 * k + i) * channels + c, y, x);
            const double ds = (r > kRawScaleLo && r < kRawScaleHi)
                                  ? (p.sigma[e + i] - kSigmaMin)
                                  : 0.0;
            g.at(n, (2 * k + i) * channels + c, y, x) =
                static_cast<T>(grad.d_sigma[e + i] * ds);
          }
        }
      }
    }
  }
  return g;
}

// ------------------------------------------------------- FactorizedPrior

template <typename T>
FactorizedPrior<T>::FactorizedPrior(int channels, nn::Rng& rng)
    : channels_(channels) {
  const double init_scale = 10.0;
  const double scale = std::pow(init_scale, 1.0 / kLayers);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  for (int k = 0; k < kLayers; ++k) {
    const int din = kDims[k], dout = kDims[k + 1];
    nn::Param<T> m(Shape{channels, dout, din, 1});
    m.value.fill(static_cast<T>(std::log(std::expm1(1.0 / scale / dout))));
    nn::Param<T> b(Shape{channels, dout, 1, 1});
    for (auto& v : b.value.vec()) v = static_cast<T>(unif(rng));
    nn::Param<T> f(Shape{channels, dout, 1, 1});
    matrices_.push_back(std::move(m));
    biases_.push_back(std::move(b));
    factors_.push_back(std::move(f));
  }
}

template <typename T>
double FactorizedPrior<T>::logits(int channel, double x) const {
  std::array<double, 3> v{x, 0, 0};
  std::array<double, 3> next{};
  for (int k = 0; k < kLayers; ++k) {
    const int din = kDims[k], dout = kDims[k + 1];
    const T* m = matrices_[k].value.sample(channel);
    const T* b = biases_[k].value.sample(channel);
    const T* f = factors_[k].value.sample(channel);
    for (int r = 0; r < dout; ++r) {
      double acc = b[r];
      for (int c = 0; c < din; ++c) acc += nn::softplus(m[r * din + c]) * v[c];
      if (k + 1 < kLayers) acc += std::tanh(f[r]) * std::tanh(acc);
      next[r] = acc;
    }
    v = next;
  }
  return v[0];
}

template <typename T>
double FactorizedPrior<T>::cdf(int channel, double x) const {
  return sigmoid(logits(channel, x));
}

template <typename T>
double FactorizedPrior<T>::likelihood(int channel, double z) const {
  const double lower = logits(channel, z - 0.5);
  const double upper = logits(channel, z + 0.5);
  const double s = (lower + upper) > 0 ? -1.0 : 1.0;
  const double p = std::abs(sigmoid(s * upper) - sigmoid(s * lower));
  return std::max(p, kProbMin);
}

template <typename T>
std::vector<double> FactorizedPrior<T>::likelihoods(const Tensor<T>& z) const {
  if (z.c() != channels_) {
    throw DimensionError("factorized prior expects " +
                         std::to_string(channels_) + " channels, got " +
                         z.shape().str());
  }
  std::vector<double> out(z.size());
  const std::size_t plane = z.shape().plane();
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < z.c(); ++c) {
      const T* src = z.plane(n, c);
      double* dst = out.data() + (static_cast<std::size_t>(n) * z.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = likelihood(c, src[i]);
    }
  }
  return out;
}

template <typename T>
double FactorizedPrior<T>::logits_backward(int channel, double x,
                                           double grad_logit) {
  // Forward pass with saved activations, then reverse accumulation.
  std::array<std::array<double, 3>, kLayers + 1> act{};
  std::array<std::array<double, 3>, kLayers> pre{};
  act[0][0] = x;
  for (int k = 0; k < kLayers; ++k) {
    const int din = kDims[k], dout = kDims[k + 1];
    const T* m = matrices_[k].value.sample(channel);
    const T* b = biases_[k].value.sample(channel);
    const T* f = factors_[k].value.sample(channel);
    for (int r = 0; r < dout; ++r) {
      double acc = b[r];
      for (int c = 0; c < din; ++c) {
        acc += nn::softplus(m[r * din + c]) * act[k][c];
      }
      pre[k][r] = acc;
      act[k + 1][r] =
          k + 1 < kLayers ? acc + std::tanh(f[r]) * std::tanh(acc) : acc;
    }
  }
  std::array<double, 3> g{grad_logit, 0, 0};
  for (int k = kLayers - 1; k >= 0; --k) {
    const int din = kDims[k], dout = kDims[k + 1];
    const T* m = matrices_[k].value.sample(channel);
    const T* f = factors_[k].value.sample(channel);
    T* gm = matrices_[k].grad.sample(channel);
    T* gb = biases_[k].grad.sample(channel);
    T* gf = factors_[k].grad.sample(channel);
    std::array<double, 3> gpre{};
    for (int r = 0; r < dout; ++r) {
      if (k + 1 < kLayers) {
        const double tf = std::tanh(f[r]);
        const double tp = std::tanh(pre[k][r]);
        gpre[r] = g[r] * (1.0 + tf * (1.0 - tp * tp));
        gf[r] += static_cast<T>(g[r] * tp * (1.0 - tf * tf));
      } else {
        gpre[r] = g[r];
      }
      gb[r] += static_cast<T>(gpre[r]);
    }
    std::array<double, 3> gin{};
    for (int r = 0; r < dout; ++r) {
      for (int c = 0; c < din; ++c) {
        const double raw = m[r * din + c];
        gm[r * din + c] += static_cast<T>(gpre[r] * act[k][c] * sigmoid(raw));
        gin[c] += nn::softplus(raw) * gpre[r];
      }
    }
    g = gin;
  }
  return g[0];
}

template <typename T>
double FactorizedPrior<T>::bits(const Tensor<T>& z, Tensor<T>* grad_z,
                                double scale) {
  if (z.c() != channels_) {
    throw DimensionError("factorized prior expects " +
                         std::to_string(channels_) + " channels, got " +
                         z.shape().str());
  }
  if (grad_z) *grad_z = Tensor<T>(z.shape());
  double total = 0;
  for (int n = 0; n < z.n(); ++n) {
    for (int c = 0; c < z.c(); ++c) {
      for (int y = 0; y < z.h(); ++y) {
        for (int x = 0; x < z.w(); ++x) {
          const double v = z.at(n, c, y, x);
          const double lower = logits(c, v - 0.5);
          const double upper = logits(c, v + 0.5);
          const double s = (lower + upper) > 0 ? -1.0 : 1.0;
          const double su = sigmoid(s * upper);
          const double sl = sigmoid(s * lower);
          const double diff = su - sl;
          const double p = std::abs(diff);
          const double pc = std::max(p, kProbMin);
          total -= std::log2(pc);
          if (!grad_z) continue;
          const double d_p = -scale / (pc * kLn2);
          const double d_diff = d_p * (diff >= 0 ? 1.0 : -1.0);
          const double d_upper = d_diff * s * su * (1.0 - su);
          const double d_lower = -d_diff * s * sl * (1.0 - sl);
          const double gx = logits_backward(c, v + 0.5, d_upper) +
                            logits_backward(c, v - 0.5, d_lower);
          grad_z->at(n, c, y, x) = static_cast<T>(gx);
        }
      }
    }
  }
  return total;
}

template <typename T>
void FactorizedPrior<T>::collect(const std::string& prefix,
                                 std::vector<nn::NamedParam<T>>& out) {
  for (int k = 0; k < kLayers; ++k) {
    const std::string i = std::to_string(k);
    out.push_back({join(prefix, "matrix" + i), &matrices_[k]});
    out.push_back({join(prefix, "bias" + i), &biases_[k]});
    if (k + 1 < kLayers) out.push_back({join(prefix, "factor" + i), &factors_[k]});
  }
}

// ------------------------------------------------------------- ParamHead

template <typename T>
ParamHead<T>::ParamHead(int in_channels, int out_symbols, int mixtures,
                        nn::Rng& rng)
    : in_(in_channels),
      hidden_(std::max(in_channels, 3 * mixtures * out_symbols)),
      symbols_(out_symbols),
      mixtures_(mixtures),
      in_conv_(in_channels, hidden_, 1, 1, 0, rng),
      res_a_(hidden_, hidden_, 1, 1, 0, rng),
      res_b_(hidden_, hidden_, 1, 1, 0, rng),
      out_conv_(hidden_, 3 * mixtures * out_symbols, 1, 1, 0, rng) {}

template <typename T>
Tensor<T> ParamHead<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_) {
    throw DimensionError("parameter head expects " + std::to_string(in_) +
                         " channels, got " + x.shape().str());
  }
  Tensor<T> h = act0_.forward(in_conv_.forward(x));
  Tensor<T> r = res_b_.forward(act1_.forward(res_a_.forward(h)));
  add_inplace(r, h);
  return out_conv_.forward(act2_.forward(r));
}

template <typename T>
Tensor<T> ParamHead<T>::backward(const Tensor<T>& gy) {
  Tensor<T> g = act2_.backward(out_conv_.backward(gy));
  Tensor<T> gh = g;
  add_inplace(gh, res_a_.backward(act1_.backward(res_b_.backward(g))));
  return in_conv_.backward(act0_.backward(gh));
}

template <typename T>
void ParamHead<T>::collect(const std::string& prefix,
                           std::vector<nn::NamedParam<T>>& out) {
  in_conv_.collect(join(prefix, "in"), out);
  res_a_.collect(join(prefix, "res_a"), out);
  res_b_.collect(join(prefix, "res_b"), out);
  out_conv_.collect(join(prefix, "out"), out);
}

template <typename T>
void ParamHead<T>::clear_cache() {
  in_conv_.clear_cache();
  res_a_.clear_cache();
  res_b_.clear_cache();
  out_conv_.clear_cache();
  act0_.clear_cache();
  act1_.clear_cache();
  act2_.clear_cache();
}

namespace {

template <typename T>
void pointwise(const nn::Conv2d<T>& conv, std::span<const double> in,
               std::span<double> out) {
  const int cin = conv.in_channels();
  const T* w = conv.weight().value.data();
  const T* b = conv.bias().value.data();
  for (int o = 0; o < conv.out_channels(); ++o) {
    double acc = static_cast<double>(b[o]);
    const T* row = w + static_cast<std::size_t>(o) * cin;
    for (int c = 0; c < cin; ++c) acc += static_cast<double>(row[c]) * in[c];
    out[o] = acc;
  }
}

void leaky(std::span<double> v, double slope) {
  for (auto& x : v) x = x > 0 ? x : slope * x;
}

}  // namespace

template <typename T>
void ParamHead<T>::eval_point(std::span<const double> in,
                              std::span<double> raw) const {
  if (static_cast<int>(in.size()) != in_ ||
      static_cast<int>(raw.size()) != raw_channels()) {
    throw DimensionError("parameter head point evaluation");
  }
  const double slope = static_cast<double>(act0_.slope());
  std::vector<double> h(hidden_), a(hidden_), r(hidden_);
  pointwise(in_conv_, in, h);
  leaky(h, slope);
  pointwise(res_a_, h, a);
  leaky(a, slope);
  pointwise(res_b_, a, r);
  for (int i = 0; i < hidden_; ++i) r[i] += h[i];
  leaky(r, slope);
  pointwise(out_conv_, r, raw);
}

template <typename T>
GmmParams estimate_params_group1(ParamHead<T>& head, const Tensor<T>& features,
                                 const Tensor<T>& c1) {
  const Tensor<T>* parts[] = {&features, &c1};
  const Tensor<T> raw = head.forward(concat_channels<T>(parts));
  return gmm_from_raw(raw, head.out_symbols(), head.mixtures());
}

template <typename T>
GmmParams estimate_params_group2(ParamHead<T>& head, const Tensor<T>& features,
                                 const Tensor<T>& c2, const Tensor<T>* c3) {
  std::vector<const Tensor<T>*> parts = {&features, &c2};
  if (c3) parts.push_back(c3);
  const Tensor<T> raw = head.forward(concat_channels<T>(parts));
  return gmm_from_raw(raw, head.out_symbols(), head.mixtures());
}

double RateReport::group1_share() const {
  const double latent = bits_y_group1 + bits_y_group2;
  return latent > 0 ? bits_y_group1 / latent : 0.0;
}

RateReport rate_bits(std::span<const double> p_group1,
                     std::span<const double> p_group2,
                     std::span<const double> p_z, long long pixels) {
  if (pixels <= 0) throw InvalidParamsError("pixel count must be positive");
  auto sum = [](std::span<const double> ps) {
    double bits = 0;
    for (double p : ps) {
      if (!(p > 0.0 && p <= 1.0)) {
        throw InvalidParamsError("probability outside (0, 1]");
      }
      bits -= std::log2(p);
    }
    return bits;
  };
  RateReport r;
  r.bits_y_group1 = sum(p_group1);
  r.bits_y_group2 = sum(p_group2);
  r.bits_z = sum(p_z);
  r.bpp = r.total_bits() / static_cast<double>(pixels);
  return r;
}

template GmmParams gmm_from_raw<float>(const Tensor<float>&, int, int);
template GmmParams gmm_from_raw<double>(const Tensor<double>&, int, int);
template Tensor<float> gmm_raw_backward<float>(const Tensor<float>&,
                                               const GmmParams&,
                                               const GmmGrad&);
template Tensor<double> gmm_raw_backward<double>(const Tensor<double>&,
                                                 const GmmParams&,
                                                 const GmmGrad&);
template class FactorizedPrior<float>;
template class FactorizedPrior<double>;
template class ParamHead<float>;
template class ParamHead<double>;
template GmmParams estimate_params_group1<float>(ParamHead<float>&,
                                                 const Tensor<float>&,
                                                 const Tensor<float>&);
template GmmParams estimate_params_group1<double>(ParamHead<double>&,
                                                  const Tensor<double>&,
                                                  const Tensor<double>&);
template GmmParams estimate_params_group2<float>(ParamHead<float>&,
                                                 const Tensor<float>&,
                                                 const Tensor<float>&,
                                                 const Tensor<float>*);
template GmmParams estimate_params_group2<double>(ParamHead<double>&,
                                                  const Tensor<double>&,
                                                  const Tensor<double>&,
                                                  const Tensor<double>*);

}  // namespace ccpc::entropy
