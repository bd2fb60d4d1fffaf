// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ccpc/layers.hpp"
#include "ccpc/tensor.hpp"

namespace testing {

template <typename T>
ccpc::Tensor<T> random_tensor(ccpc::Shape s, std::uint64_t seed, double lo = -1,
                              double hi = 1) {
  ccpc::Tensor<T> t(s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(u(rng));
  return t;
}

template <typename T>
ccpc::Tensor<T> random_ints(ccpc::Shape s, std::uint64_t seed, int lo, int hi) {
  ccpc::Tensor<T> t(s);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(u(rng));
  return t;
}

inline double rel_error(const std::vector<double>& a,
                        const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max(std::sqrt(std::max(na, nb)), 1e-12);
  return std::sqrt(diff) / scale;
}

/// Central differences of f at `x` along every coordinate.
inline std::vector<double> numeric_grad(const std::function<double()>& f,
                                        double* x, std::size_t n,
                                        double eps = 1e-4) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

struct LayerCheck {
  double input_error = 0;
  double param_error = 0;
};

/// Gradient check of loss = <w, layer(x)> for a double layer: analytic
/// input and parameter gradients against central differences.
inline LayerCheck check_layer(ccpc::nn::Layer<double>& layer,
                              ccpc::Tensor<double> x, std::uint64_t seed,
                              double eps = 1e-4) {
  const auto y0 = layer.forward(x);
  const auto w = random_tensor<double>(y0.shape(), seed);
  auto loss = [&] {
    const auto y = layer.forward(x);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
    return s;
  };
  std::vector<ccpc::nn::NamedParam<double>> params;
  layer.collect("", params);
  for (auto& p : params) p.param->zero_grad();
  layer.forward(x);
  const auto gx = layer.backward(w);

  LayerCheck out;
  out.input_error = rel_error(
      std::vector<double>(gx.data(), gx.data() + gx.size()),
      numeric_grad(loss, x.data(), x.size(), eps));
  std::vector<double> analytic, numeric;
  for (auto& p : params) {
    const auto& g = p.param->grad;
    analytic.insert(analytic.end(), g.data(), g.data() + g.size());
    const auto n = numeric_grad(loss, p.param->value.data(),
                                p.param->value.size(), eps);
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  out.param_error = params.empty() ? 0 : rel_error(analytic, numeric);
  return out;
}

}  // namespace testing
