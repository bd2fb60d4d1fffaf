// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "ccpc/errors.hpp"
#include "ccpc/global_prediction.hpp"
#include "helpers.hpp"

using namespace ccpc;
using namespace ccpc::global;
using testing::random_ints;
using testing::random_tensor;

namespace {

std::vector<double> random_rows(int positions, int s, std::uint64_t seed, int lo,
                                int hi) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(positions) * s);
  for (double& x : v) x = u(rng);
  return v;
}

// Sort all earlier positions by (score desc, index asc) and keep k.
std::vector<int> oracle_refs(const std::vector<double>& rows, int s, int n, int k) {
  std::vector<std::pair<double, int>> cand;
  for (int m = 0; m < n; ++m) {
    double d = 0;
    for (int c = 0; c < s; ++c) {
      const double t = rows[m * s + c] - rows[n * s + c];
      d += t * t;
    }
    cand.push_back({-d, m});
  }
  std::sort(cand.begin(), cand.end(), [](auto a, auto b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int> out;
  for (int i = 0; i < std::min<int>(k, cand.size()); ++i) out.push_back(cand[i].second);
  return out;
}

std::vector<double> mlp_single(GlobalMlp<double>& mlp, std::span<const double> v) {
  Tensor<double> x(1, mlp.in_channels(), 1, 1);
  for (int c = 0; c < mlp.in_channels(); ++c) x.at(0, c, 0, 0) = v[c];
  const auto y = mlp.forward(x);
  return {y.data(), y.data() + y.size()};
}

}  // namespace

TEST_CASE("correlation closed forms") {
  const std::vector<double> same{1, 2, 1, 2};
  auto corr = causal_correlation(same, 2, 2);
  CHECK(corr.at(0, 1) == 0);
  CHECK(corr.at(1, 0) == CausalCorrelationMatrix::kMasked);
  CHECK(corr.at(0, 0) == CausalCorrelationMatrix::kMasked);
  const std::vector<double> v{0, 0, 3, 4};
  corr = causal_correlation(v, 2, 2);
  CHECK(corr.at(0, 1) == -25);
}

TEST_CASE("correlation matches a brute-force double loop") {
  const auto rows = random_rows(9, 3, 1, -5, 5);
  const auto corr = causal_correlation(rows, 9, 3);
  for (int m = 0; m < 9; ++m) {
    for (int n = 0; n < 9; ++n) {
      if (m >= n) {
        CHECK(corr.at(m, n) == CausalCorrelationMatrix::kMasked);
        continue;
      }
      double d = 0;
      for (int c = 0; c < 3; ++c) {
        d += (rows[m * 3 + c] - rows[n * 3 + c]) * (rows[m * 3 + c] - rows[n * 3 + c]);
      }
      CHECK(corr.at(m, n) == -d);
    }
  }
}

TEST_CASE("cosine similarity") {
  const double a[] = {1, 0}, b[] = {0, 2}, c[] = {2, 0}, z[] = {0, 0};
  CHECK(similarity(a, b, Distance::kCosine) == 0);
  CHECK(similarity(a, c, Distance::kCosine) == doctest::Approx(1.0));
  CHECK(similarity(a, z, Distance::kCosine) == 0);
  CHECK(parse_distance("cosine") == Distance::kCosine);
  CHECK(parse_distance(to_string(Distance::kNegL2)) == Distance::kNegL2);
  CHECK_THROWS_AS(parse_distance("l1"), InvalidParamsError);
}

TEST_CASE("top-k edge cases") {
  const auto rows = random_rows(3, 2, 2, -3, 3);
  const auto refs = topk_references(causal_correlation(rows, 3, 2), 4);
  CHECK(refs.indices[0].empty());
  CHECK(refs.indices[2].size() == 2);
  auto two = refs.indices[2];
  std::sort(two.begin(), two.end());
  CHECK(two == std::vector<int>{0, 1});
  CHECK_THROWS_AS(topk_references(causal_correlation(rows, 3, 2), 0),
                  InvalidParamsError);
}

TEST_CASE("top-k matches the brute-force oracle on random 5x5 grids") {
  for (int trial = 0; trial < 100; ++trial) {
    // Small integer range so ties are common.
    const auto rows = random_rows(25, 2, 100 + trial, -2, 2);
    const auto refs = topk_references(causal_correlation(rows, 25, 2), 4);
    for (int n = 0; n < 25; ++n) CHECK(refs.indices[n] == oracle_refs(rows, 2, n, 4));
  }
}

TEST_CASE("tie rule prefers the smaller raster index") {
  const std::vector<double> scores{-1, -3, -1, 0, 0};
  CHECK(select_references(scores, 3) == std::vector<int>{3, 4, 0});
  CHECK(select_references(scores, -1) == std::vector<int>{3, 4, 0, 2, 1});
}

TEST_CASE("incremental references match the full matrix") {
  const auto rows = random_rows(30, 3, 7, -3, 3);
  for (auto mode : {Mode::kTopK, Mode::kDense}) {
    GlobalConfig cfg;
    cfg.mode = mode;
    IncrementalReferences inc(3, cfg);
    const auto refs = topk_references(causal_correlation(rows, 30, 3), cfg.budget());
    for (int n = 0; n < 30; ++n) {
      CHECK(inc.push(std::span<const double>(&rows[n * 3], 3)) == refs.indices[n]);
    }
  }
}

TEST_CASE("gather and fuse against per-vector MLP calls") {
  nn::Rng rng(3);
  GlobalMlp<double> mlp(3, 6, rng);
  const int h = 4, w = 4, s = 2;
  const auto g1 = random_rows(h * w, s, 4, -3, 3);
  const auto g2 = random_ints<double>({1, 3, h, w}, 5, -4, 4);
  const auto refs = topk_references(causal_correlation(g1, h * w, s), 4);
  const auto c3 = gather_and_fuse(refs, g2, mlp);
  CHECK(c3.shape() == Shape{1, 6, h, w});
  for (int c = 0; c < 6; ++c) CHECK(c3.at(0, c, 0, 0) == 0);  // no references

  for (int n = 1; n < h * w; ++n) {
    std::vector<double> expect(6, 0.0);
    for (int m : refs.indices[n]) {
      const double v[] = {g2.at(0, 0, m / w, m % w), g2.at(0, 1, m / w, m % w),
                          g2.at(0, 2, m / w, m % w)};
      const auto f = mlp_single(mlp, v);
      for (int c = 0; c < 6; ++c) expect[c] += f[c];
    }
    for (int c = 0; c < 6; ++c) {
      expect[c] /= static_cast<double>(refs.indices[n].size());
      CHECK(c3.at(0, c, n / w, n % w) == doctest::Approx(expect[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("identical references average to one MLP output") {
  nn::Rng rng(6);
  GlobalMlp<double> mlp(2, 4, rng);
  const double v[] = {1, -2};
  std::vector<double> fused(4 * 4);
  std::vector<double> one(4);
  mlp.eval_point(v, one);
  for (int r = 0; r < 4; ++r) std::copy(one.begin(), one.end(), fused.begin() + r * 4);
  const int refs[] = {0, 1, 2, 3};
  std::vector<double> out(4);
  average_point(refs, fused, 4, out);
  for (int c = 0; c < 4; ++c) CHECK(out[c] == doctest::Approx(one[c]).epsilon(1e-15));
  const auto ref_val = mlp_single(mlp, v);
  for (int c = 0; c < 4; ++c) CHECK(one[c] == doctest::Approx(ref_val[c]).epsilon(1e-12));
}

TEST_CASE("reference order does not change the mean") {
  const auto fused = random_rows(6, 3, 8, -9, 9);
  std::vector<int> refs{5, 1, 3, 0};
  std::vector<double> a(3), b(3);
  average_point(refs, fused, 3, a);
  std::reverse(refs.begin(), refs.end());
  average_point(refs, fused, 3, b);
  for (int c = 0; c < 3; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-14));
}

TEST_CASE("dense mode averages every earlier position") {
  nn::Rng rng(9);
  GlobalMlp<double> mlp(2, 3, rng);
  const int h = 3, w = 3;
  const auto g1 = random_rows(9, 2, 10, -2, 2);
  const auto g2 = random_ints<double>({1, 2, h, w}, 11, -3, 3);
  const auto corr = causal_correlation(g1, 9, 2);
  const auto dense = dense_mode(corr, g2, mlp);
  for (int n = 1; n < 9; ++n) {
    std::vector<double> expect(3, 0.0);
    for (int m = 0; m < n; ++m) {
      const double v[] = {g2.at(0, 0, m / w, m % w), g2.at(0, 1, m / w, m % w)};
      const auto f = mlp_single(mlp, v);
      for (int c = 0; c < 3; ++c) expect[c] += f[c] / n;
    }
    for (int c = 0; c < 3; ++c) {
      CHECK(dense.at(0, c, n / w, n % w) == doctest::Approx(expect[c]).epsilon(1e-12));
    }
  }
  // With one earlier position any k gives the same answer.
  const auto topk = gather_and_fuse(topk_references(corr, 1), g2, mlp);
  for (int c = 0; c < 3; ++c) CHECK(topk.at(0, c, 0, 1) == dense.at(0, c, 0, 1));
}

TEST_CASE("global context is causal on a 5x5 grid") {
  nn::Rng rng(12);
  const int m = 4, s = 2, g = 5;
  GlobalPrediction<double> gp(m, s, 6, GlobalConfig{}, rng);
  const auto base_in = random_ints<double>({1, m, g, g}, 13, -2, 2);
  const auto base = gp.forward(base_in);
  for (int p = 0; p < g * g; ++p) {
    for (int c = 0; c < m; ++c) {
      auto in = base_in;
      in.at(0, c, p / g, p % g) += 3;
      const auto out = gp.forward(in);
      const int limit = c < s ? p : p + 1;  // group 2 at p must not matter
      for (int n = 0; n < limit; ++n) {
        for (int k = 0; k < 6; ++k) {
          CHECK(out.at(0, k, n / g, n % g) == base.at(0, k, n / g, n % g));
        }
      }
    }
  }
}

TEST_CASE("global prediction gradients match finite differences") {
  nn::Rng rng(14);
  GlobalPrediction<double> gp(4, 2, 5, GlobalConfig{}, rng);
  // Gradients flow only into the second group; the first group selects.
  auto x = random_ints<double>({1, 4, 3, 3}, 15, -2, 2);
  const auto y0 = gp.forward(x);
  const auto w = random_tensor<double>(y0.shape(), 16);
  std::vector<nn::NamedParam<double>> params;
  gp.collect("g", params);
  for (auto& p : params) p.param->zero_grad();
  gp.forward(x);
  const auto gx = gp.backward(w);
  auto loss = [&] {
    const auto y = gp.forward(x);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
    return s;
  };
  std::vector<double> analytic, numeric;
  for (int c = 2; c < 4; ++c) {
    for (int yy = 0; yy < 3; ++yy) {
      for (int xx = 0; xx < 3; ++xx) {
        analytic.push_back(gx.at(0, c, yy, xx));
        numeric.push_back(testing::numeric_grad(loss, &x.at(0, c, yy, xx), 1)[0]);
      }
    }
  }
  CHECK(testing::rel_error(analytic, numeric) < 1e-3);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 9; ++i) CHECK(gx.at(0, c, i / 3, i % 3) == 0);
  }
  analytic.clear();
  numeric.clear();
  for (auto& p : params) {
    const auto& g = p.param->grad;
    analytic.insert(analytic.end(), g.data(), g.data() + g.size());
    const auto n = testing::numeric_grad(loss, p.param->value.data(), p.param->value.size());
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  CHECK(testing::rel_error(analytic, numeric) < 1e-3);
}

TEST_CASE("global config validation") {
  GlobalConfig cfg;
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidParamsError);
  cfg.mode = Mode::kDense;
  CHECK(cfg.budget() == -1);
  CHECK(parse_mode("dense") == Mode::kDense);
  CHECK(parse_mode("topk") == Mode::kTopK);
}
