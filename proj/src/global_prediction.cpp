// SPDX-License-Identifier: Apache-2.0
#include "ccpc/global_prediction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccpc::global {

void GlobalConfig::validate() const {
  if (mode == Mode::kTopK && k < 1) {
    throw InvalidParamsError("global prediction k must be >= 1");
  }
}

Distance parse_distance(const std::string& s) {
  if (s == "neg_l2") return Distance::kNegL2;
  if (s == "cosine") return Distance::kCosine;
  throw InvalidParamsError("unknown distance '" + s + "'");
}

Mode parse_mode(const std::string& s) {
  if (s == "topk") return Mode::kTopK;
  if (s == "dense") return Mode::kDense;
  throw InvalidParamsError("unknown global mode '" + s + "'");
}

std::string to_string(Distance d) {
  return d == Distance::kNegL2 ? "neg_l2" : "cosine";
}

std::string to_string(Mode m) { return m == Mode::kTopK ? "topk" : "dense"; }

double similarity(std::span<const double> a, std::span<const double> b,
                  Distance d) {
  if (d == Distance::kNegL2) {
    double acc = 0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double diff = a[c] - b[c];
      acc += diff * diff;
    }
    return -acc;
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    dot += a[c] * b[c];
    na += a[c] * a[c];
    nb += b[c] * b[c];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

CausalCorrelationMatrix causal_correlation(std::span<const double> group1,
                                           int positions, int s, Distance d) {
  if (static_cast<std::size_t>(positions) * s != group1.size()) {
    throw DimensionError("causal_correlation: " +
                         std::to_string(group1.size()) + " values for " +
                         std::to_string(positions) + " x " +
                         std::to_string(s));
  }
  CausalCorrelationMatrix out;
  out.positions = positions;
  out.scores.assign(static_cast<std::size_t>(positions) * positions,
                    CausalCorrelationMatrix::kMasked);
  for (int n = 1; n < positions; ++n) {
    const auto vn = group1.subspan(static_cast<std::size_t>(n) * s, s);
    for (int m = 0; m < n; ++m) {
      out.scores[static_cast<std::size_t>(m) * positions + n] = similarity(
          group1.subspan(static_cast<std::size_t>(m) * s, s), vn, d);
    }
  }
  return out;
}

std::vector<int> select_references(std::span<const double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  const int take = k < 0 ? n : std::min(k, n);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), better);
  idx.resize(take);
  return idx;
}

ReferenceSet topk_references(const CausalCorrelationMatrix& corr, int k) {
  if (k == 0) throw InvalidParamsError("topk_references needs k >= 1");
  ReferenceSet refs;
  refs.k = k;
  refs.indices.resize(corr.positions);
  std::vector<double> column;
  for (int n = 0; n < corr.positions; ++n) {
    column.resize(n);
    for (int m = 0; m < n; ++m) column[m] = corr.at(m, n);
    refs.indices[n] = select_references(column, k);
  }
  return refs;
}

// -------------------------------------------------------------- GlobalMlp

template <typename T>
GlobalMlp<T>::GlobalMlp(int in_channels, int width, nn::Rng& rng)
    : in_(in_channels), width_(width) {
  l0_ = &net_.template emplace<nn::Conv2d<T>>("fc0", in_channels, width, 1, 1,
                                              0, rng);
  net_.template emplace<nn::Relu<T>>("act0");
  l1_ = &net_.template emplace<nn::Conv2d<T>>("fc1", width, width, 1, 1, 0,
                                              rng);
  net_.template emplace<nn::Relu<T>>("act1");
  l2_ = &net_.template emplace<nn::Conv2d<T>>("fc2", width, width, 1, 1, 0,
                                              rng);
}

template <typename T>
Tensor<T> GlobalMlp<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_) {
    throw DimensionError("global MLP expects " + std::to_string(in_) +
                         " channels, got " + x.shape().str());
  }
  return net_.forward(x);
}

template <typename T>
Tensor<T> GlobalMlp<T>::backward(const Tensor<T>& grad_out) {
  return net_.backward(grad_out);
}

template <typename T>
void GlobalMlp<T>::collect(const std::string& prefix,
                           std::vector<nn::NamedParam<T>>& out) {
  net_.collect(prefix, out);
}

namespace {

template <typename T>
void dense(const nn::Conv2d<T>& layer, std::span<const double> in,
           std::span<double> out, bool relu) {
  const int cin = layer.in_channels();
  const T* w = layer.weight().value.data();
  const T* b = layer.bias().value.data();
  for (int o = 0; o < layer.out_channels(); ++o) {
    double acc = static_cast<double>(b[o]);
    const T* row = w + static_cast<std::size_t>(o) * cin;
    for (int c = 0; c < cin; ++c) acc += static_cast<double>(row[c]) * in[c];
    out[o] = relu ? std::max(acc, 0.0) : acc;
  }
}

}  // namespace

template <typename T>
void GlobalMlp<T>::eval_point(std::span<const double> in,
                              std::span<double> out) const {
  if (static_cast<int>(in.size()) != in_ ||
      static_cast<int>(out.size()) != width_) {
    throw DimensionError("global MLP point evaluation");
  }
  std::vector<double> a(width_), b(width_);
  dense(*l0_, in, a, true);
  dense(*l1_, a, b, true);
  dense(*l2_, b, out, false);
}

void average_point(std::span<const int> refs, std::span<const double> fused,
                   int width, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (refs.empty()) return;
  for (int m : refs) {
    const double* row = fused.data() + static_cast<std::size_t>(m) * width;
    for (int c = 0; c < width; ++c) out[c] += row[c];
  }
  const double count = static_cast<double>(refs.size());
  for (int c = 0; c < width; ++c) out[c] /= count;
}

Tensor<double> average_references(const ReferenceSet& refs,
                                  std::span<const double> fused, int width,
                                  int h, int w) {
  const int positions = h * w;
  if (static_cast<int>(refs.indices.size()) != positions ||
      fused.size() != static_cast<std::size_t>(positions) * width) {
    throw DimensionError("average_references sizes");
  }
  Tensor<double> out(1, width, h, w);
  std::vector<double> acc(width);
  for (int n = 0; n < positions; ++n) {
    const auto& idx = refs.indices[n];
    for (int m : idx) {
      if (m < 0 || m >= n) {
        throw InvalidParamsError("reference to an undecoded position");
      }
    }
    average_point(idx, fused, width, acc);
    for (int c = 0; c < width; ++c) out.at(0, c, n / w, n % w) = acc[c];
  }
  return out;
}

template <typename T>
Tensor<double> gather_and_fuse(const ReferenceSet& refs,
                               const Tensor<double>& group2,
                               const GlobalMlp<T>& mlp) {
  if (group2.c() != mlp.in_channels() || group2.n() != 1) {
    throw DimensionError("gather_and_fuse on " + group2.shape().str());
  }
  const int h = group2.h(), w = group2.w(), positions = h * w;
  const int width = mlp.width();
  std::vector<double> fused(static_cast<std::size_t>(positions) * width);
  std::vector<double> v(group2.c());
  for (int m = 0; m < positions; ++m) {
    for (int c = 0; c < group2.c(); ++c) v[c] = group2.at(0, c, m / w, m % w);
    mlp.eval_point(v, std::span(fused).subspan(
                          static_cast<std::size_t>(m) * width, width));
  }
  return average_references(refs, fused, width, h, w);
}

template <typename T>
Tensor<double> dense_mode(const CausalCorrelationMatrix& corr,
                          const Tensor<double>& group2,
                          const GlobalMlp<T>& mlp) {
  return gather_and_fuse(topk_references(corr, -1), group2, mlp);
}

template <typename T>
std::vector<double> group1_rows(const Tensor<T>& y_hat, int n, int s) {
  const int h = y_hat.h(), w = y_hat.w();
  std::vector<double> rows(static_cast<std::size_t>(h) * w * s);
  for (int c = 0; c < s; ++c) {
    const T* plane = y_hat.plane(n, c);
    for (int p = 0; p < h * w; ++p) {
      rows[static_cast<std::size_t>(p) * s + c] = static_cast<double>(plane[p]);
    }
  }
  return rows;
}

// -------------------------------------------------- IncrementalReferences

IncrementalReferences::IncrementalReferences(int s, const GlobalConfig& cfg)
    : s_(s), cfg_(cfg) {
  cfg.validate();
}

std::vector<int> IncrementalReferences::push(std::span<const double> group1) {
  if (static_cast<int>(group1.size()) != s_) {
    throw DimensionError("incremental references: vector of " +
                         std::to_string(group1.size()) + ", expected " +
                         std::to_string(s_));
  }
  scratch_.resize(count_);
  for (int m = 0; m < count_; ++m) {
    scratch_[m] = similarity(
        std::span<const double>(rows_).subspan(static_cast<std::size_t>(m) * s_,
                                               s_),
        group1, cfg_.distance);
  }
  std::vector<int> refs = select_references(scratch_, cfg_.budget());
  rows_.insert(rows_.end(), group1.begin(), group1.end());
  ++count_;
  return refs;
}

// ------------------------------------------------------- GlobalPrediction

template <typename T>
GlobalPrediction<T>::GlobalPrediction(int latent_channels, int split,
                                      int width, const GlobalConfig& cfg,
                                      nn::Rng& rng)
    : m_(latent_channels),
      s_(split),
      cfg_(cfg),
      mlp_(latent_channels - split, width, rng) {
  if (split <= 0 || split >= latent_channels) {
    throw InvalidParamsError("global prediction needs 0 < s < M");
  }
  cfg.validate();
}

template <typename T>
void GlobalPrediction<T>::set_config(const GlobalConfig& cfg) {
  cfg.validate();
  cfg_ = cfg;
}

template <typename T>
Tensor<T> GlobalPrediction<T>::forward(const Tensor<T>& y_hat) {
  if (y_hat.c() != m_) {
    throw DimensionError("global prediction expects " + std::to_string(m_) +
                         " channels, got " + y_hat.shape().str());
  }
  in_shape_ = y_hat.shape();
  const int h = y_hat.h(), w = y_hat.w(), positions = h * w;
  const int width = mlp_.width();
  Tensor<T> fused = mlp_.forward(slice_channels(y_hat, s_, m_));
  Tensor<T> out(y_hat.n(), width, h, w);
  refs_.clear();
  for (int n = 0; n < y_hat.n(); ++n) {
    const auto rows = group1_rows(y_hat, n, s_);
    const auto corr = causal_correlation(rows, positions, s_, cfg_.distance);
    refs_.push_back(topk_references(corr, cfg_.budget()));
    const auto& idx = refs_.back().indices;
    for (int p = 0; p < positions; ++p) {
      if (idx[p].empty()) continue;
      const T inv = T(1) / static_cast<T>(idx[p].size());
      for (int c = 0; c < width; ++c) {
        T acc = 0;
        const T* plane = fused.plane(n, c);
        for (int m : idx[p]) acc += plane[m];
        out.plane(n, c)[p] = acc * inv;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> GlobalPrediction<T>::backward(const Tensor<T>& grad_out) {
  const int positions = in_shape_.h * in_shape_.w;
  const int width = mlp_.width();
  Tensor<T> g_fused(in_shape_.n, width, in_shape_.h, in_shape_.w);
  for (int n = 0; n < in_shape_.n; ++n) {
    const auto& idx = refs_[n].indices;
    for (int p = 0; p < positions; ++p) {
      if (idx[p].empty()) continue;
      const T inv = T(1) / static_cast<T>(idx[p].size());
      for (int c = 0; c < width; ++c) {
        const T g = grad_out.plane(n, c)[p] * inv;
        T* plane = g_fused.plane(n, c);
        for (int m : idx[p]) plane[m] += g;
      }
    }
  }
  Tensor<T> g2 = mlp_.backward(g_fused);
  Tensor<T> gx(in_shape_);
  assign_channels(gx, g2, s_);
  return gx;
}

template <typename T>
void GlobalPrediction<T>::collect(const std::string& prefix,
                                  std::vector<nn::NamedParam<T>>& out) {
  mlp_.collect(prefix.empty() ? "mlp" : prefix + ".mlp", out);
}

template <typename T>
void GlobalPrediction<T>::clear_cache() {
  mlp_.clear_cache();
  refs_.clear();
}

#define CCPC_INSTANTIATE(T)                                                   \
  template class GlobalMlp<T>;                                                \
  template class GlobalPrediction<T>;                                         \
  template Tensor<double> gather_and_fuse<T>(                                 \
      const ReferenceSet&, const Tensor<double>&, const GlobalMlp<T>&);       \
  template Tensor<double> dense_mode<T>(const CausalCorrelationMatrix&,       \
                                        const Tensor<double>&,                \
                                        const GlobalMlp<T>&);                 \
  template std::vector<double> group1_rows<T>(const Tensor<T>&, int, int);

CCPC_INSTANTIATE(float)
CCPC_INSTANTIATE(double)

}  // namespace ccpc::global
