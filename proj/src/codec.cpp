// SPDX-License-Identifier: Apache-2.0
#include "ccpc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <random>

namespace ccpc::codec {

double round_half_away(double v) { return std::round(v); }

template <typename T>
Tensor<T> quantize(const Tensor<T>& y, QuantMode mode, nn::Rng* rng) {
  if (mode == QuantMode::kRound) return round_tensor(y);
  if (!rng) throw InvalidParamsError("noise quantization needs an rng");
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  Tensor<T> out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    out[i] = static_cast<T>(static_cast<double>(y[i]) + unif(*rng));
  }
  return out;
}

void SymbolAlphabet::validate() const {
  if (y_min >= y_max || z_min >= z_max) {
    throw InvalidParamsError("alphabet bounds must satisfy min < max");
  }
  if (y_max - y_min + 1 > 4096 || z_max - z_min + 1 > 4096) {
    throw InvalidParamsError("alphabet too large for 16-bit tables");
  }
}

rc::CdfTable quantize_pmf(std::span<const double> pmf) {
  const std::size_t k = pmf.size();
  if (k < 2 || k > rc::kTotal / 2) {
    throw InvalidParamsError("pmf size " + std::to_string(k));
  }
  const double spread = static_cast<double>(rc::kTotal - k);
  std::vector<std::int64_t> freq(k);
  std::int64_t sum = 0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double p = std::clamp(pmf[i], 0.0, 1.0);
    freq[i] = 1 + static_cast<std::int64_t>(std::floor(p * spread));
    sum += freq[i];
    if (pmf[i] > pmf[best]) best = i;
  }
  std::int64_t left = static_cast<std::int64_t>(rc::kTotal) - sum;
  if (left >= 0) {
    freq[best] += left;
  } else {
    // Only reachable if the pmf sums noticeably above one.
    for (std::size_t i = 0; left < 0 && i < k; ++i) {
      const std::int64_t take = std::min<std::int64_t>(freq[i] - 1, -left);
      freq[i] -= take;
      left += take;
    }
  }
  rc::CdfTable t;
  t.counts.resize(k + 1);
  t.counts[0] = 0;
  for (std::size_t i = 0; i < k; ++i) {
    t.counts[i + 1] = t.counts[i] + static_cast<std::uint32_t>(freq[i]);
  }
  return t;
}

namespace {

// Same floor as the likelihood, so a tail symbol costs about 15 bits in the
// table as well as in the estimate.
std::vector<double> floor_pmf(std::vector<double> pmf) {
  double total = 0;
  for (double& p : pmf) {
    p = std::max(p, entropy::kProbMin);
    total += p;
  }
  for (double& p : pmf) p /= total;
  return pmf;
}

}  // namespace

rc::CdfTable gmm_cdf_table(std::span<const double> pi,
                           std::span<const double> mu,
                           std::span<const double> sigma, int lo, int hi) {
  const int k = hi - lo + 1;
  std::vector<double> pmf(k, 0.0);
  for (std::size_t i = 0; i < pi.size(); ++i) {
    double prev = 0.0;
    for (int j = 0; j < k; ++j) {
      const double cur =
          j + 1 < k ? entropy::normal_cdf((lo + j + 0.5 - mu[i]) / sigma[i])
                    : 1.0;
      pmf[j] += pi[i] * (cur - prev);
      prev = cur;
    }
  }
  return quantize_pmf(floor_pmf(pmf));
}

std::vector<rc::CdfTable> build_cdf_table(const entropy::GmmParams& p,
                                          const SymbolAlphabet& alphabet) {
  p.validate();
  alphabet.validate();
  std::vector<rc::CdfTable> out;
  out.reserve(p.elements());
  const std::size_t k = p.mixtures;
  for (std::size_t e = 0; e < p.elements(); ++e) {
    out.push_back(gmm_cdf_table(std::span(p.pi).subspan(e * k, k),
                                std::span(p.mu).subspan(e * k, k),
                                std::span(p.sigma).subspan(e * k, k),
                                alphabet.y_min, alphabet.y_max));
  }
  return out;
}

template <typename T>
rc::CdfTable prior_cdf_table(const entropy::FactorizedPrior<T>& prior,
                             int channel, int lo, int hi) {
  const int k = hi - lo + 1;
  std::vector<double> pmf(k);
  double prev = 0.0;
  for (int j = 0; j < k; ++j) {
    const double cur = j + 1 < k ? prior.cdf(channel, lo + j + 0.5) : 1.0;
    pmf[j] = cur - prev;
    prev = cur;
  }
  return quantize_pmf(floor_pmf(pmf));
}

// -------------------------------------------------------------- bitstream

namespace {

constexpr char kMagic[4] = {'C', 'C', 'P', 'C'};

void put16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(static_cast<std::uint8_t>(v >> 8));
  o.push_back(static_cast<std::uint8_t>(v));
}

void put32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) o.push_back(static_cast<std::uint8_t>(v >> s));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return need(1), b_[pos_++]; }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] << 8 | b_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | b_[pos_++];
    return v;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CorruptStreamError("bitstream truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

int latent_extent(int pixels) {
  return (pixels + kPadMultiple - 1) / kPadMultiple * (kPadMultiple / kLatentStride);
}

}  // namespace

std::vector<std::uint8_t> serialize(const Bitstream& b) {
  std::vector<std::uint8_t> o(kMagic, kMagic + 4);
  o.push_back(b.header.version);
  o.push_back(b.header.quality_id);
  put16(o, b.header.orig_h);
  put16(o, b.header.orig_w);
  put16(o, b.header.latent_h);
  put16(o, b.header.latent_w);
  put32(o, static_cast<std::uint32_t>(b.z_payload.size()));
  o.insert(o.end(), b.z_payload.begin(), b.z_payload.end());
  put32(o, static_cast<std::uint32_t>(b.y_payload.size()));
  o.insert(o.end(), b.y_payload.begin(), b.y_payload.end());
  return o;
}

Bitstream parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CorruptStreamError("not a CCPC bitstream");
  }
  Reader r(bytes.subspan(4));
  Bitstream b;
  b.header.version = r.u8();
  if (b.header.version != kBitstreamVersion) {
    throw VersionMismatchError("bitstream version " +
                               std::to_string(b.header.version) +
                               ", expected " +
                               std::to_string(kBitstreamVersion));
  }
  b.header.quality_id = r.u8();
  b.header.orig_h = r.u16();
  b.header.orig_w = r.u16();
  b.header.latent_h = r.u16();
  b.header.latent_w = r.u16();
  if (b.header.orig_h == 0 || b.header.orig_w == 0 ||
      b.header.latent_h != latent_extent(b.header.orig_h) ||
      b.header.latent_w != latent_extent(b.header.orig_w)) {
    throw CorruptStreamError("inconsistent bitstream extents");
  }
  const std::uint32_t len_z = r.u32();
  b.z_payload = r.bytes(len_z);
  const std::uint32_t len_y = r.u32();
  b.y_payload = r.bytes(len_y);
  if (r.remaining() != 0) {
    throw CorruptStreamError("trailing bytes after latent payload");
  }
  return b;
}

template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, int multiple) {
  const int h = (x.h() + multiple - 1) / multiple * multiple;
  const int w = (x.w() + multiple - 1) / multiple * multiple;
  if (h == x.h() && w == x.w()) return x;
  Tensor<T> out(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < h; ++y) {
        const int sy = std::min(y, x.h() - 1);
        for (int xx = 0; xx < w; ++xx) {
          out.at(n, c, y, xx) = x.at(n, c, sy, std::min(xx, x.w() - 1));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int h, int w) {
  if (h > x.h() || w > x.w()) {
    throw DimensionError("crop " + std::to_string(h) + "x" +
                         std::to_string(w) + " from " + x.shape().str());
  }
  Tensor<T> out(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < h; ++y) {
        std::copy_n(&x.at(n, c, y, 0), w, &out.at(n, c, y, 0));
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ codec

namespace {

/// Per-position parameter evaluation shared by encoder and decoder.
class EntropyPath {
 public:
  explicit EntropyPath(const CompressionModel<float>& m)
      : m_(m),
        mm_(m.config().latent()),
        s_(m.config().split()),
        f_(m.config().transform.features()),
        ctx_(m.config().ctx()),
        k_(m.config().mixtures),
        gw_(m.config().use_global() ? m.config().gwidth() : 0),
        in1_(f_ + ctx_),
        in2_(f_ + ctx_ + gw_),
        raw1_(m.head1().raw_channels()),
        raw2_(m.head2() ? m.head2()->raw_channels() : 0) {}

  int split() const { return s_; }
  int mixtures() const { return k_; }
  int global_width() const { return gw_; }

  // Writes s * K values into each of pi, mu, sigma (channel-major).
  void group1(const Tensor<double>& feats, const Tensor<double>& y_hat,
              int py, int px, std::span<double> pi, std::span<double> mu,
              std::span<double> sigma) {
    in1_.resize(f_ + ctx_);
    for (int c = 0; c < f_; ++c) in1_[c] = feats.at(0, c, py, px);
    m_.context1().eval_point(y_hat, py, px,
                             std::span(in1_).subspan(f_, ctx_));
    raw1_.resize(m_.head1().raw_channels());
    m_.head1().eval_point(in1_, raw1_);
    entropy::gmm_point_from_raw(raw1_, s_, k_, pi, mu, sigma);
  }

  void group2(const Tensor<double>& feats, const Tensor<double>& y_hat,
              int py, int px, std::span<const double> c3,
              std::span<double> pi, std::span<double> mu,
              std::span<double> sigma) {
    in2_.resize(f_ + ctx_ + gw_);
    for (int c = 0; c < f_; ++c) in2_[c] = feats.at(0, c, py, px);
    m_.context2()->eval_point(y_hat, py, px,
                              std::span(in2_).subspan(f_, ctx_));
    for (int c = 0; c < gw_; ++c) in2_[f_ + ctx_ + c] = c3[c];
    raw2_.resize(m_.head2()->raw_channels());
    m_.head2()->eval_point(in2_, raw2_);
    entropy::gmm_point_from_raw(raw2_, mm_ - s_, k_, pi, mu, sigma);
  }

 private:
  const CompressionModel<float>& m_;
  int mm_, s_, f_, ctx_, k_, gw_;
  std::vector<double> in1_, in2_, raw1_, raw2_;
};

struct PointParams {
  std::vector<double> pi, mu, sigma;
  void resize(std::size_t n) {
    pi.resize(n);
    mu.resize(n);
    sigma.resize(n);
  }
};

void record(std::vector<double>* out, const PointParams& p, int channel,
            int k) {
  if (!out) return;
  const std::size_t o = static_cast<std::size_t>(channel) * k;
  out->insert(out->end(), p.pi.begin() + o, p.pi.begin() + o + k);
  out->insert(out->end(), p.mu.begin() + o, p.mu.begin() + o + k);
  out->insert(out->end(), p.sigma.begin() + o, p.sigma.begin() + o + k);
}

rc::CdfTable element_table(const PointParams& p, int channel, int k, int lo,
                           int hi) {
  const std::size_t o = static_cast<std::size_t>(channel) * k;
  return gmm_cdf_table(std::span(p.pi).subspan(o, k),
                       std::span(p.mu).subspan(o, k),
                       std::span(p.sigma).subspan(o, k), lo, hi);
}

double element_bits(const PointParams& p, int channel, int k, double v) {
  const std::size_t o = static_cast<std::size_t>(channel) * k;
  const double mass = entropy::gmm_mass(v, std::span(p.pi).subspan(o, k),
                                        std::span(p.mu).subspan(o, k),
                                        std::span(p.sigma).subspan(o, k));
  return -std::log2(std::max(mass, entropy::kProbMin));
}

double table_bits(const rc::CdfTable& t, int sym) {
  return -std::log2(static_cast<double>(t.counts[sym + 1] - t.counts[sym]) /
                    rc::kTotal);
}

}  // namespace

Codec::Codec(CompressionModel<float>& model, SymbolAlphabet alphabet)
    : model_(model), alphabet_(alphabet) {
  alphabet_.validate();
}

Tensor<float> Codec::reconstruct(const Tensor<double>& y_hat, int h, int w) {
  Tensor<float> x_hat = model_.synthesis().forward(y_hat.cast<float>());
  model_.synthesis().clear_cache();
  clamp_unit(x_hat);
  return crop(x_hat, h, w);
}

EncodeResult Codec::encode(const Tensor<float>& x, std::vector<double>* params) {
  if (x.n() != 1 || x.c() != 3) {
    throw DimensionError("encode expects 1x3xHxW, got " + x.shape().str());
  }
  if (x.h() > 65535 || x.w() > 65535) throw DimensionError("image too large");
  const auto& cfg = model_.config();
  const int m = cfg.latent(), s = cfg.split(), k = cfg.mixtures;
  EncodeResult res;
  res.pixels = static_cast<long long>(x.h()) * x.w();

  const Tensor<float> xp = pad_replicate(x, kPadMultiple);
  const Tensor<float> y = model_.analysis().forward(xp);
  model_.analysis().clear_cache();
  const Tensor<float> z = model_.hyper_analysis().forward(y);
  model_.hyper_analysis().clear_cache();

  auto clamp_round = [&](const Tensor<float>& t, int lo, int hi) {
    Tensor<double> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double r = round_half_away(static_cast<double>(t[i]));
      const double c = std::clamp(r, static_cast<double>(lo),
                                  static_cast<double>(hi));
      if (c != r) ++res.clamped;
      out[i] = c;
    }
    return out;
  };
  res.z_hat = clamp_round(z, alphabet_.z_min, alphabet_.z_max);
  res.y_hat = clamp_round(y, alphabet_.y_min, alphabet_.y_max);
  const Tensor<double>& y_hat = res.y_hat;
  const int h = y_hat.h(), w = y_hat.w(), positions = h * w;

  // z stream: one table per channel.
  rc::Encoder zenc;
  for (int c = 0; c < res.z_hat.c(); ++c) {
    const rc::CdfTable t =
        prior_cdf_table(model_.prior(), c, alphabet_.z_min, alphabet_.z_max);
    for (int i = 0; i < res.z_hat.h() * res.z_hat.w(); ++i) {
      const double v = res.z_hat.plane(0, c)[i];
      const int sym = static_cast<int>(v) - alphabet_.z_min;
      zenc.encode(t, sym);
      res.z.table_bits += table_bits(t, sym);
      res.z.model_bits -= std::log2(model_.prior().likelihood(c, v));
    }
  }
  const std::vector<std::uint8_t> zbytes = zenc.finish();
  res.z.payload_bytes = zbytes.size();

  const Tensor<double> feats =
      model_.hyper_synthesis().forward_deterministic(res.z_hat);

  // Teacher forcing: every position's parameters from the full y_hat.
  EntropyPath path(model_);
  std::vector<PointParams> p1(positions), p2;
  for (int p = 0; p < positions; ++p) {
    p1[p].resize(static_cast<std::size_t>(s) * k);
    path.group1(feats, y_hat, p / w, p % w, p1[p].pi, p1[p].mu, p1[p].sigma);
  }
  if (cfg.grouped()) {
    const int gw = path.global_width();
    std::vector<double> c3(static_cast<std::size_t>(positions) * gw);
    if (cfg.use_global()) {
      const auto& mlp = model_.global_prediction()->mlp();
      const auto rows = global::group1_rows(y_hat, 0, s);
      const auto corr =
          global::causal_correlation(rows, positions, s, cfg.global.distance);
      const auto refs = global::topk_references(corr, cfg.global.budget());
      std::vector<double> fused(static_cast<std::size_t>(positions) * gw);
      std::vector<double> v(m - s);
      for (int p = 0; p < positions; ++p) {
        for (int c = 0; c < m - s; ++c) v[c] = y_hat.at(0, s + c, p / w, p % w);
        mlp.eval_point(v, std::span(fused).subspan(
                              static_cast<std::size_t>(p) * gw, gw));
      }
      for (int p = 0; p < positions; ++p) {
        global::average_point(
            refs.indices[p], fused, gw,
            std::span(c3).subspan(static_cast<std::size_t>(p) * gw, gw));
      }
    }
    p2.resize(positions);
    for (int p = 0; p < positions; ++p) {
      p2[p].resize(static_cast<std::size_t>(m - s) * k);
      path.group2(feats, y_hat, p / w, p % w,
                  std::span<const double>(c3).subspan(
                      static_cast<std::size_t>(p) * gw, gw),
                  p2[p].pi, p2[p].mu, p2[p].sigma);
    }
  }

  rc::Encoder yenc;
  for (int p = 0; p < positions; ++p) {
    const int py = p / w, px = p % w;
    for (int c = 0; c < m; ++c) {
      const bool first = c < s;
      const PointParams& pp = first ? p1[p] : p2[p];
      const int ch = first ? c : c - s;
      const double v = y_hat.at(0, c, py, px);
      const rc::CdfTable t =
          element_table(pp, ch, k, alphabet_.y_min, alphabet_.y_max);
      const int sym = static_cast<int>(v) - alphabet_.y_min;
      yenc.encode(t, sym);
      record(params, pp, ch, k);
      res.y.table_bits += table_bits(t, sym);
      const double bits = element_bits(pp, ch, k, v);
      (first ? res.model_bits_y1 : res.model_bits_y2) += bits;
    }
  }
  res.y.model_bits = res.model_bits_y1 + res.model_bits_y2;
  Bitstream b;
  b.header.quality_id = static_cast<std::uint8_t>(cfg.quality_id);
  b.header.orig_h = static_cast<std::uint16_t>(x.h());
  b.header.orig_w = static_cast<std::uint16_t>(x.w());
  b.header.latent_h = static_cast<std::uint16_t>(h);
  b.header.latent_w = static_cast<std::uint16_t>(w);
  b.z_payload = zbytes;
  b.y_payload = yenc.finish();
  res.y.payload_bytes = b.y_payload.size();
  res.bytes = serialize(b);
  res.x_hat = reconstruct(y_hat, x.h(), x.w());
  return res;
}

DecodeResult Codec::decode(std::span<const std::uint8_t> bytes,
                           std::vector<double>* params) {
  const Bitstream b = parse(bytes);
  const auto& cfg = model_.config();
  if (b.header.quality_id != cfg.quality_id) {
    throw VersionMismatchError(
        "bitstream quality " + std::to_string(b.header.quality_id) +
        " does not match checkpoint quality " + std::to_string(cfg.quality_id));
  }
  const int m = cfg.latent(), s = cfg.split(), k = cfg.mixtures;
  const int n_ch = cfg.transform.N;
  const int h = b.header.latent_h, w = b.header.latent_w, positions = h * w;
  DecodeResult res;
  res.header = b.header;

  res.z_hat = Tensor<double>(1, n_ch, h / 4, w / 4);
  {
    rc::Decoder zdec(b.z_payload);
    for (int c = 0; c < n_ch; ++c) {
      const rc::CdfTable t =
          prior_cdf_table(model_.prior(), c, alphabet_.z_min, alphabet_.z_max);
      double* plane = res.z_hat.plane(0, c);
      for (int i = 0; i < (h / 4) * (w / 4); ++i) {
        plane[i] = zdec.decode(t) + alphabet_.z_min;
      }
    }
  }
  const Tensor<double> feats =
      model_.hyper_synthesis().forward_deterministic(res.z_hat);

  res.y_hat = Tensor<double>(1, m, h, w);
  Tensor<double>& y_hat = res.y_hat;
  EntropyPath path(model_);
  rc::Decoder ydec(b.y_payload);
  const int gw = path.global_width();
  std::optional<global::IncrementalReferences> refs;
  if (cfg.use_global()) refs.emplace(s, cfg.global);
  std::vector<double> fused;
  std::vector<double> c3(gw), g1(s), g2(m - s);
  PointParams p1, p2;
  p1.resize(static_cast<std::size_t>(s) * k);
  p2.resize(static_cast<std::size_t>(m - s) * k);

  for (int p = 0; p < positions; ++p) {
    const int py = p / w, px = p % w;
    // Stage 1: first group from f_c1 and the hyper features.
    path.group1(feats, y_hat, py, px, p1.pi, p1.mu, p1.sigma);
    for (int c = 0; c < s; ++c) {
      const rc::CdfTable t =
          element_table(p1, c, k, alphabet_.y_min, alphabet_.y_max);
      record(params, p1, c, k);
      y_hat.at(0, c, py, px) = ydec.decode(t) + alphabet_.y_min;
    }
    if (!cfg.grouped()) continue;
    // Stage 2: second group from f_c2, which now sees this position's first
    // group, and the global context.
    if (refs) {
      for (int c = 0; c < s; ++c) g1[c] = y_hat.at(0, c, py, px);
      const std::vector<int> sel = refs->push(g1);
      global::average_point(sel, fused, gw, c3);
    }
    path.group2(feats, y_hat, py, px, c3, p2.pi, p2.mu, p2.sigma);
    for (int c = 0; c < m - s; ++c) {
      const rc::CdfTable t =
          element_table(p2, c, k, alphabet_.y_min, alphabet_.y_max);
      record(params, p2, c, k);
      y_hat.at(0, s + c, py, px) = ydec.decode(t) + alphabet_.y_min;
    }
    if (refs) {
      for (int c = 0; c < m - s; ++c) g2[c] = y_hat.at(0, s + c, py, px);
      fused.resize(fused.size() + gw);
      model_.global_prediction()->mlp().eval_point(
          g2, std::span(fused).subspan(fused.size() - gw, gw));
    }
  }
  res.x_hat = reconstruct(y_hat, b.header.orig_h, b.header.orig_w);
  return res;
}

template Tensor<float> quantize<float>(const Tensor<float>&, QuantMode,
                                       nn::Rng*);
template Tensor<double> quantize<double>(const Tensor<double>&, QuantMode,
                                         nn::Rng*);
template rc::CdfTable prior_cdf_table<float>(
    const entropy::FactorizedPrior<float>&, int, int, int);
template rc::CdfTable prior_cdf_table<double>(
    const entropy::FactorizedPrior<double>&, int, int, int);
template Tensor<float> pad_replicate<float>(const Tensor<float>&, int);
template Tensor<double> pad_replicate<double>(const Tensor<double>&, int);
template Tensor<float> crop<float>(const Tensor<float>&, int, int);
template Tensor<double> crop<double>(const Tensor<double>&, int, int);

}  // namespace ccpc::codec
