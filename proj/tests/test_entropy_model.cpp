// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "ccpc/entropy_model.hpp"
#include "ccpc/errors.hpp"
#include "helpers.hpp"

using namespace ccpc;
using namespace ccpc::entropy;
using testing::numeric_grad;
using testing::random_tensor;
using testing::rel_error;

namespace {

// Independent reference for one Gaussian bin.
double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ref_mass(double y, const std::vector<double>& pi,
                const std::vector<double>& mu, const std::vector<double>& sigma) {
  double m = 0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    m += pi[i] * (phi((y + 0.5 - mu[i]) / sigma[i]) -
                  phi((y - 0.5 - mu[i]) / sigma[i]));
  }
  return m;
}

GmmParams random_params(int elements, int k, std::uint64_t seed) {
  GmmParams p(1, elements, 1, 1, k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (int e = 0; e < elements; ++e) {
    double total = 0;
    for (int i = 0; i < k; ++i) {
      p.pi[e * k + i] = 0.1 + u(rng);
      total += p.pi[e * k + i];
      p.mu[e * k + i] = -5 + 10 * u(rng);
      p.sigma[e * k + i] = 0.05 + 4 * u(rng);
    }
    for (int i = 0; i < k; ++i) p.pi[e * k + i] /= total;
  }
  return p;
}

}  // namespace

TEST_CASE("unit gaussian bin at zero") {
  const double pi[] = {1}, mu[] = {0}, sigma[] = {1};
  const double expected = phi(0.5) - phi(-0.5);
  CHECK(expected == doctest::Approx(0.38292).epsilon(1e-5));
  CHECK(gmm_mass(0, pi, mu, sigma) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("single component likelihood is symmetric around a zero mean") {
  const double pi[] = {1}, mu[] = {0};
  for (double s : {0.2, 1.0, 3.7}) {
    const double sigma[] = {s};
    for (int a = 0; a <= 6; ++a) {
      CHECK(gmm_mass(a, pi, mu, sigma) ==
            doctest::Approx(gmm_mass(-a, pi, mu, sigma)).epsilon(1e-12));
    }
  }
}

TEST_CASE("three-component mixture sums to one over [-30, 30]") {
  const std::vector<double> pi{0.2, 0.3, 0.5}, mu{-2, 0, 3}, sigma{0.5, 1, 2};
  double total = 0, oracle = 0;
  for (int y = -30; y <= 30; ++y) {
    total += gmm_mass(y, pi, mu, sigma);
    oracle += ref_mass(y, pi, mu, sigma);
  }
  CHECK(std::abs(total - 1) < 1e-6);
  CHECK(std::abs(oracle - 1) < 1e-6);
  for (int y = -30; y <= 30; ++y) {
    CHECK(gmm_mass(y, pi, mu, sigma) ==
          doctest::Approx(ref_mass(y, pi, mu, sigma)).epsilon(1e-9));
  }
}

TEST_CASE("normalization holds for random parameters") {
  const auto p = random_params(50, 3, 1);
  for (int e = 0; e < 50; ++e) {
    std::span<const double> pi(&p.pi[e * 3], 3), mu(&p.mu[e * 3], 3),
        sigma(&p.sigma[e * 3], 3);
    double smax = 0, mmax = 0;
    for (int i = 0; i < 3; ++i) {
      smax = std::max(smax, sigma[i]);
      mmax = std::max(mmax, std::abs(mu[i]));
    }
    const int b = static_cast<int>(std::ceil(30 * smax + mmax));
    double total = 0;
    for (int y = -b; y <= b; ++y) total += gmm_mass(y, pi, mu, sigma);
    CHECK(std::abs(total - 1) < 1e-6);
  }
}

TEST_CASE("tiny sigma tail stays accurate") {
  // Far from the mean the mass must not collapse to a difference of ones.
  const double pi[] = {1}, mu[] = {0}, sigma[] = {0.5};
  const double m = gmm_mass(6, pi, mu, sigma);
  const double oracle = 0.5 * (std::erfc(5.5 / 0.5 / std::sqrt(2.0)) -
                               std::erfc(6.5 / 0.5 / std::sqrt(2.0)));
  CHECK(m > 0);
  CHECK(m == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("larger sigma lowers the probability of the mean symbol") {
  const double pi[] = {1};
  for (double mu : {0.0, 0.3, -2.4}) {
    const double m[] = {mu};
    double prev = 2;
    for (double s = 0.1; s < 20; s *= 1.3) {
      const double sg[] = {s};
      const double p = gmm_mass(std::round(mu), pi, m, sg);
      CHECK(p < prev);
      prev = p;
    }
  }
}

TEST_CASE("likelihood is floored at p_min") {
  GmmParams p(1, 1, 1, 1, 1);
  p.pi[0] = 1;
  p.mu[0] = 0;
  p.sigma[0] = 0.01;
  const double y[] = {40};
  CHECK(discrete_gmm_likelihood(y, p)[0] == kProbMin);
}

TEST_CASE("gmm params validation") {
  GmmParams p(1, 1, 1, 1, 2);
  p.pi = {0.5, 0.5};
  p.mu = {0, 0};
  p.sigma = {1, 1};
  CHECK_NOTHROW(p.validate());
  p.sigma[1] = 0.001;
  CHECK_THROWS_AS(p.validate(), InvalidParamsError);
  p.sigma[1] = 1;
  p.pi = {0.6, 0.6};
  CHECK_THROWS_AS(p.validate(), InvalidParamsError);
}

TEST_CASE("bit gradients match finite differences") {
  auto p = random_params(20, 3, 2);
  std::vector<double> y(20);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(-6, 6);
  for (double& v : y) v = u(rng);
  GmmGrad g;
  gmm_bits(y, p, &g);
  auto f = [&] { return gmm_bits(y, p); };
  const double eps = 1e-6;
  CHECK(rel_error(g.d_pi, numeric_grad(f, p.pi.data(), p.pi.size(), eps)) < 1e-3);
  CHECK(rel_error(g.d_mu, numeric_grad(f, p.mu.data(), p.mu.size(), eps)) < 1e-3);
  CHECK(rel_error(g.d_sigma,
                  numeric_grad(f, p.sigma.data(), p.sigma.size(), eps)) < 1e-3);
  // Non-integer positions, as seen with additive noise.
  std::uniform_real_distribution<double> ur(-0.5, 0.5);
  for (double& v : y) v += ur(rng);
  gmm_bits(y, p, &g);
  CHECK(rel_error(g.d_y, numeric_grad(f, y.data(), y.size(), eps)) < 1e-3);
}

TEST_CASE("raw head outputs map to valid params with matching gradients") {
  const int c = 3, k = 3;
  auto raw = random_tensor<double>({1, 3 * k * c, 2, 2}, 4, -2, 2);
  const auto p = gmm_from_raw(raw, c, k);
  CHECK_NOTHROW(p.validate());
  std::vector<double> y(p.elements());
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> u(-3, 3);
  for (double& v : y) v = u(rng);
  GmmGrad g;
  gmm_bits(y, p, &g);
  const auto gr = gmm_raw_backward(raw, p, g);
  auto f = [&] { return gmm_bits(y, gmm_from_raw(raw, c, k)); };
  CHECK(rel_error(std::vector<double>(gr.data(), gr.data() + gr.size()),
                  numeric_grad(f, raw.data(), raw.size())) < 1e-3);
}

TEST_CASE("parameter heads: shapes, normalization, independence") {
  nn::Rng rng(6);
  const int f = 16, ctx = 8, s = 4, k = 3;
  ParamHead<float> h1(f + ctx, s, k, rng);
  ParamHead<float> h2(f + ctx, s, k, rng);
  const auto feat = random_tensor<float>({1, f, 5, 6}, 7);
  const auto c1 = random_tensor<float>({1, ctx, 5, 6}, 8);
  const auto p1 = estimate_params_group1(h1, feat, c1);
  CHECK(p1.n == 1);
  CHECK(p1.c == s);
  CHECK(p1.h == 5);
  CHECK(p1.w == 6);
  CHECK(p1.mixtures == k);
  for (std::size_t e = 0; e < p1.elements(); ++e) {
    double total = 0;
    for (int i = 0; i < k; ++i) total += p1.pi[e * k + i];
    CHECK(std::abs(total - 1) < 1e-5);
  }
  // Separate weights: same input, different output.
  const auto p2 = estimate_params_group1(h2, feat, c1);
  CHECK(p1.mu != p2.mu);
  // Mutating the second head leaves the first untouched.
  std::vector<nn::NamedParam<float>> params;
  h2.collect("h2", params);
  for (auto& np : params) np.param->value.fill(0.25f);
  const auto again = estimate_params_group1(h1, feat, c1);
  CHECK(again.mu == p1.mu);
  CHECK(again.sigma == p1.sigma);
}

TEST_CASE("second head accepts a zero global context") {
  nn::Rng rng(9);
  const int f = 16, ctx = 8, gw = 8, m2 = 4;
  ParamHead<float> h(f + ctx + gw, m2, 3, rng);
  const auto feat = random_tensor<float>({1, f, 4, 4}, 10);
  const auto c2 = random_tensor<float>({1, ctx, 4, 4}, 11);
  const Tensor<float> c3(1, gw, 4, 4);
  const auto p = estimate_params_group2(h, feat, c2, &c3);
  CHECK(p.c == m2);
  CHECK_NOTHROW(p.validate());
  for (double v : p.mu) CHECK(std::isfinite(v));
}

TEST_CASE("head point evaluation agrees with the batched path") {
  nn::Rng rng(12);
  ParamHead<double> h(10, 3, 3, rng);
  const auto x = random_tensor<double>({1, 10, 3, 3}, 13);
  const auto raw = h.forward(x);
  std::vector<double> in(10), out(h.raw_channels());
  for (int c = 0; c < 10; ++c) in[c] = x.at(0, c, 1, 2);
  h.eval_point(in, out);
  for (int c = 0; c < h.raw_channels(); ++c) {
    CHECK(out[c] == doctest::Approx(raw.at(0, c, 1, 2)).epsilon(1e-10));
  }
}

TEST_CASE("factorized prior: nonnegative, normalized, floored") {
  nn::Rng rng(14);
  FactorizedPrior<float> prior(4, rng);
  for (int c = 0; c < 4; ++c) {
    double total = 0;
    double prev = -1;
    // Untrained, the density is about ten units wide with logistic tails.
    for (int z = -300; z <= 300; ++z) {
      CHECK(prior.likelihood(c, z) >= 0);
      // Unclamped bin mass; the floor would add p_min per tail symbol.
      total += prior.cdf(c, z + 0.5) - prior.cdf(c, z - 0.5);
      const double cdf = prior.cdf(c, z + 0.5);
      CHECK(cdf >= prev);
      prev = cdf;
    }
    CHECK(std::abs(total - 1) < 1e-4);
    CHECK(prior.likelihood(c, 1e6) == kProbMin);
    CHECK(prior.likelihood(c, -1e6) == kProbMin);
  }
}

TEST_CASE("factorized prior gradients match finite differences") {
  nn::Rng rng(15);
  FactorizedPrior<double> prior(2, rng);
  auto z = random_tensor<double>({1, 2, 2, 3}, 16, -3, 3);
  std::vector<nn::NamedParam<double>> params;
  prior.collect("prior", params);
  // Move the factors off zero so their gradients are exercised.
  for (auto& p : params) {
    if (p.name.find("factor") != std::string::npos) p.param->value.fill(0.3);
    p.param->zero_grad();
  }
  Tensor<double> gz(z.shape());
  prior.bits(z, &gz);
  auto f = [&] { return prior.bits(z); };
  CHECK(rel_error(std::vector<double>(gz.data(), gz.data() + gz.size()),
                  numeric_grad(f, z.data(), z.size(), 1e-6)) < 1e-3);
  std::vector<double> analytic, numeric;
  for (auto& p : params) {
    const auto& g = p.param->grad;
    analytic.insert(analytic.end(), g.data(), g.data() + g.size());
    const auto n = numeric_grad(f, p.param->value.data(), p.param->value.size(), 1e-6);
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  CHECK(rel_error(analytic, numeric) < 1e-3);
}

TEST_CASE("rate bits") {
  const std::vector<double> half(100, 0.5);
  auto r = rate_bits(half, {}, {}, 10);
  CHECK(r.bits_y_group1 == 100);
  CHECK(r.bpp == 10);
  const std::vector<double> one{1.0};
  r = rate_bits(one, {}, {}, 1);
  CHECK(r.total_bits() == 0);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(1e-4, 1);
  std::vector<double> a(300), b(200), z(50);
  for (auto* v : {&a, &b, &z}) {
    for (double& p : *v) p = u(rng);
  }
  r = rate_bits(a, b, z, 4096);
  auto resum = [](const std::vector<double>& ps) {
    double s = 0;
    for (double p : ps) s -= std::log2(p);
    return s;
  };
  CHECK(r.bits_y_group1 == resum(a));
  CHECK(r.bits_y_group2 == resum(b));
  CHECK(r.bits_z == resum(z));
  CHECK(r.group1_share() == resum(a) / (resum(a) + resum(b)));

  const std::vector<double> bad{0.0};
  CHECK_THROWS_AS(rate_bits(bad, {}, {}, 1), InvalidParamsError);
}
