// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any line fails.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "ccpc/causal_context.hpp"
#include "ccpc/codec.hpp"
#include "ccpc/entropy_model.hpp"
#include "ccpc/errors.hpp"
#include "ccpc/global_prediction.hpp"
#include "ccpc/metrics.hpp"
#include "ccpc/training.hpp"

using namespace ccpc;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kRoundTripSeconds = 600;
constexpr double kNormTol = 1e-6;
constexpr double kGradTol = 1e-3;
constexpr double kRateTol = 0.01;
constexpr double kStreamSlack = 1.001;
constexpr double kStreamBits = 256;
constexpr int kBudgetSteps = 30000;
constexpr int kMinLambdas = 4;
constexpr double kShareFloor = 0.5;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

Tensor<float> noise_image(int h, int w, std::uint64_t seed) {
  Tensor<float> x(1, 3, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

ModelConfig desk_config() {
  ModelConfig c;
  c.transform.N = 64;
  c.transform.M = 32;
  c.transform.F = 64;
  return c;
}

template <typename T>
bool same(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

// --------------------------------------------------------------- criteria

bool round_trip(codec::Codec& codec) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::pair<int, int>> sizes(20, {128, 128});
  for (auto s : {std::pair{768, 512}, std::pair{512, 768}, std::pair{321, 479},
                 std::pair{200, 640}, std::pair{97, 133}}) {
    sizes.push_back(s);
  }
  int exact = 0;
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto x = noise_image(sizes[i].first, sizes[i].second, 1000 + i);
    const auto e = codec.encode(x);
    const auto d = codec.decode(e.bytes);
    clamped += e.clamped;
    exact += same(e.y_hat, d.y_hat) && same(e.z_hat, d.z_hat) &&
             same(e.x_hat, d.x_hat);
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start).count();
  const bool ok = exact == static_cast<int>(sizes.size()) && secs < kRoundTripSeconds;
  report(ok, "bit-exact round trip",
         std::to_string(exact) + "/" + std::to_string(sizes.size()) +
             " images exact (y, z, x), " + fmt(secs, 3) + " s, " +
             std::to_string(clamped) + " symbols clamped");
  return ok;
}

bool context_equivalence(codec::Codec& codec, const std::vector<Tensor<float>>& images) {
  int equal = 0;
  std::size_t params = 0;
  for (const auto& x : images) {
    std::vector<double> enc, dec;
    const auto e = codec.encode(x, &enc);
    codec.decode(e.bytes, &dec);
    params += enc.size();
    equal += enc == dec;
  }
  const bool ok = equal == static_cast<int>(images.size()) && params > 0;
  report(ok, "encoder/decoder context equivalence",
         std::to_string(equal) + "/" + std::to_string(images.size()) +
             " images identical over " + std::to_string(params) + " GMM values");
  return ok;
}

void randomize(context::MaskedConv<double>& conv, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto* t : {&conv.conv().weight().value, &conv.conv().bias().value}) {
    for (std::size_t i = 0; i < t->size(); ++i) t->data()[i] = u(rng);
  }
  conv.apply_mask();
}

Tensor<double> random_grid(int c, int g, std::uint64_t seed) {
  Tensor<double> t(1, c, g, g);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(-3, 3);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

// Counts outputs at positions <= `limit` that moved.
int leaks(const Tensor<double>& a, const Tensor<double>& b, int limit, int g) {
  int n = 0;
  for (int p = 0; p <= limit && p < g * g; ++p) {
    for (int c = 0; c < a.c(); ++c) n += a.at(0, c, p / g, p % g) != b.at(0, c, p / g, p % g);
  }
  return n;
}

void causality() {
  const int m = 8, s = 4, g = 6;
  nn::Rng rng(3);
  context::MaskSpec std_spec;
  context::MaskedConv<double> c1(s, 12, std_spec, rng);
  randomize(c1, 4);
  context::MaskSpec imp_spec;
  imp_spec.mode = context::MaskMode::kImproved;
  imp_spec.split = s;
  context::MaskedConv<double> c2(m, 12, imp_spec, rng);
  randomize(c2, 5);
  global::GlobalPrediction<double> gp(m, s, 10, global::GlobalConfig{}, rng);

  const auto y1 = random_grid(s, g, 6);
  const auto y = random_grid(m, g, 7);
  const auto b1 = context::masked_conv_standard(y1, c1);
  const auto b2 = context::masked_conv_improved(y, c2);
  const auto b3 = gp.forward(y);
  int leak1 = 0, leak2 = 0, leak3 = 0, moved = 0, probes = 0;
  for (int p = 0; p < g * g; ++p) {
    for (int c = 0; c < s; ++c) {
      auto in = y1;
      in.at(0, c, p / g, p % g) += 2;
      const auto o = context::masked_conv_standard(in, c1);
      leak1 += leaks(o, b1, p, g);  // the current position is excluded too
      ++probes;
    }
    for (int c = 0; c < m; ++c) {
      auto in = y;
      in.at(0, c, p / g, p % g) += 2;
      // Group 1 at p may inform p itself; group 2 at p may not.
      const int limit = c < s ? p - 1 : p;
      const auto o2 = context::masked_conv_improved(in, c2);
      leak2 += leaks(o2, b2, limit, g);
      const auto o3 = gp.forward(in);
      leak3 += leaks(o3, b3, limit, g);
      moved += leaks(o3, b3, g * g - 1, g) > 0;
      probes += 2;
    }
  }
  report(leak1 == 0 && leak2 == 0 && leak3 == 0 && moved > 0, "causality suite",
         std::to_string(probes) + " perturbations on a 6x6 grid; leaks f_c1=" +
             std::to_string(leak1) + " f_c2=" + std::to_string(leak2) +
             " c3=" + std::to_string(leak3));
}

std::vector<int> oracle_refs(const std::vector<double>& rows, int s, int n, int k) {
  std::vector<std::pair<double, int>> cand;
  for (int j = 0; j < n; ++j) {
    double d = 0;
    for (int c = 0; c < s; ++c) {
      const double t = rows[j * s + c] - rows[n * s + c];
      d += t * t;
    }
    cand.push_back({-d, j});
  }
  std::sort(cand.begin(), cand.end(), [](auto a, auto b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int> out;
  for (int i = 0; i < std::min<int>(k, cand.size()); ++i) out.push_back(cand[i].second);
  return out;
}

void topk_oracle() {
  int mismatched = 0, ties = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(500 + trial);
    std::uniform_int_distribution<int> u(-2, 2);
    const int s = 3;
    std::vector<double> rows(25 * s);
    for (double& v : rows) v = u(rng);
    const auto corr = global::causal_correlation(rows, 25, s);
    const auto refs = global::topk_references(corr, 4);
    for (int n = 0; n < 25; ++n) {
      mismatched += refs.indices[n] != oracle_refs(rows, s, n, 4);
      for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) ties += corr.at(a, n) == corr.at(b, n);
      }
    }
  }
  report(mismatched == 0, "top-k oracle equivalence",
         "100 random 5x5 grids, " + std::to_string(mismatched) +
             " mismatching positions, " + std::to_string(ties) + " tied pairs");
}

void normalization_and_gradients() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  const int elements = 200, k = 3;
  entropy::GmmParams p(1, elements, 1, 1, k);
  for (int e = 0; e < elements; ++e) {
    double total = 0;
    for (int i = 0; i < k; ++i) {
      p.pi[e * k + i] = 0.05 + u(rng);
      total += p.pi[e * k + i];
      p.mu[e * k + i] = -20 + 40 * u(rng);
      p.sigma[e * k + i] = entropy::kSigmaMin + 8 * std::pow(u(rng), 2);
    }
    for (int i = 0; i < k; ++i) p.pi[e * k + i] /= total;
  }
  double worst = 0;
  for (int e = 0; e < elements; ++e) {
    std::span<const double> pi(&p.pi[e * k], k), mu(&p.mu[e * k], k),
        sigma(&p.sigma[e * k], k);
    const double smax = *std::max_element(sigma.begin(), sigma.end());
    double mmax = 0;
    for (double v : mu) mmax = std::max(mmax, std::abs(v));
    const int b = static_cast<int>(std::ceil(30 * smax + mmax));
    double sum = 0;
    for (int y = -b; y <= b; ++y) sum += entropy::gmm_mass(y, pi, mu, sigma);
    worst = std::max(worst, std::abs(sum - 1));
  }

  // Gradient of total bits against central differences. Elements sitting on
  // the probability floor have a flat loss, so they are left out.
  for (auto& v : p.sigma) v = std::max(v, 0.1);
  std::vector<double> y(elements);
  std::uniform_real_distribution<double> off(-0.5, 0.5);
  for (int e = 0; e < elements; ++e) y[e] = std::round(p.mu[e * k]) + std::round(4 * off(rng));
  const auto mass = entropy::discrete_gmm_likelihood(y, p);
  std::vector<bool> floored(elements);
  int excluded = 0;
  for (int e = 0; e < elements; ++e) {
    floored[e] = mass[e] < 1.01 * entropy::kProbMin;
    excluded += floored[e];
  }
  entropy::GmmGrad g;
  entropy::gmm_bits(y, p, &g);
  auto rel = [&](std::vector<double>& values, const std::vector<double>& analytic) {
    double diff = 0, norm = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (floored[i / k]) continue;
      const double keep = values[i], eps = 1e-6 * std::max(1.0, std::abs(keep));
      values[i] = keep + eps;
      const double up = entropy::gmm_bits(y, p);
      values[i] = keep - eps;
      const double down = entropy::gmm_bits(y, p);
      values[i] = keep;
      const double fd = (up - down) / (2 * eps);
      diff += (fd - analytic[i]) * (fd - analytic[i]);
      norm += fd * fd + analytic[i] * analytic[i];
    }
    return std::sqrt(diff / std::max(norm, 1e-300));
  };
  const double e_pi = rel(p.pi, g.d_pi), e_mu = rel(p.mu, g.d_mu),
               e_sigma = rel(p.sigma, g.d_sigma);
  const double gworst = std::max({e_pi, e_mu, e_sigma});
  report(worst < kNormTol && gworst < kGradTol, "likelihood normalization and gradients",
         "max |sum P - 1| = " + fmt(worst, 3) + " (tol " + fmt(kNormTol) +
             "), gradient rel err pi/mu/sigma = " + fmt(e_pi, 3) + "/" +
             fmt(e_mu, 3) + "/" + fmt(e_sigma, 3) + " (tol " + fmt(kGradTol) + "), " + std::to_string(excluded) +
             " floored elements skipped");
}

bool rate_fidelity(codec::Codec& codec, const std::vector<Tensor<float>>& images) {
  double actual = 0, estimate = 0, worst_image = 0;
  int stream_ok = 0, streams = 0;
  double worst_ratio = 0;
  for (const auto& x : images) {
    const auto e = codec.encode(x);
    const double a = 8.0 * e.bytes.size();
    const double est = e.y.model_bits + e.z.model_bits;
    actual += a;
    estimate += est;
    worst_image = std::max(worst_image, std::abs(a - est) / est);
    for (const codec::StreamStats* s : {&e.y, &e.z}) {
      const double bits = 8.0 * s->payload_bytes;
      ++streams;
      stream_ok += bits >= s->table_bits && bits <= s->table_bits * kStreamSlack + kStreamBits;
      worst_ratio = std::max(worst_ratio, (bits - s->table_bits) / std::max(s->table_bits, 1.0));
    }
  }
  const double gap = std::abs(actual - estimate) / estimate;
  long long pixels = 0;
  for (const auto& x : images) pixels += static_cast<long long>(x.h()) * x.w();
  const bool ok = !images.empty() && gap < kRateTol && stream_ok == streams;
  report(ok, "rate-estimate fidelity",
         std::to_string(images.size()) + " images, actual " + fmt(actual / pixels) +
             " bpp vs estimate " + fmt(estimate / pixels) + " bpp, gap " +
             fmt(100 * gap, 3) + "% (tol 1%), worst image " + fmt(100 * worst_image, 3) +
             "%; streams within [ideal, ideal*1.001+256]: " + std::to_string(stream_ok) +
             "/" + std::to_string(streams));
  return ok;
}

struct SummaryRow {
  std::string setting;
  double lambda, bpp, psnr, msssim, share;
};

std::vector<SummaryRow> read_summary(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  std::vector<SummaryRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    SummaryRow r;
    std::string cell;
    std::getline(ss, r.setting, ',');
    double* fields[] = {&r.lambda, &r.bpp, &r.psnr, &r.msssim, &r.share};
    for (double* d : fields) {
      std::getline(ss, cell, ',');
      *d = std::stod(cell);
    }
    rows.push_back(r);
  }
  return rows;
}

int trained_steps(const fs::path& log) {
  std::ifstream f(log);
  std::string line, last;
  while (std::getline(f, line)) {
    if (!line.empty()) last = line;
  }
  if (last.empty()) return 0;
  return nlohmann::json::parse(last).value("step", 0);
}

void ablation(const fs::path& dir, std::vector<SummaryRow>* rows_out) {
  const std::string name = "ablation direction";
  std::vector<SummaryRow> rows;
  try {
    rows = read_summary(dir / "summary.csv");
  } catch (const std::exception& e) {
    report(false, name, std::string("no sweep results (") + e.what() + ")");
    return;
  }
  *rows_out = rows;
  std::map<std::string, std::vector<metrics::RdPoint>> curves;
  int min_steps = -1;
  for (const auto& r : rows) {
    metrics::RdPoint p;
    p.bpp = r.bpp;
    p.psnr = r.psnr;
    curves[r.setting].push_back(p);
    std::ostringstream tag;
    tag << r.setting << "_l" << r.lambda;
    const int steps = trained_steps(dir / (tag.str() + ".log.jsonl"));
    min_steps = min_steps < 0 ? steps : std::min(min_steps, steps);
  }
  for (const char* s : {"conventional", "causal", "causal_global"}) {
    if (curves[s].size() < kMinLambdas) {
      report(false, name, std::string("setting ") + s + " has " +
                              std::to_string(curves[s].size()) + " lambda points, need " +
                              std::to_string(kMinLambdas));
      return;
    }
  }
  auto bd = [&](const char* a, const char* b) {
    try {
      return metrics::bd_rate(curves[a], curves[b]);
    } catch (const std::exception&) {
      return std::nan("");
    }
  };
  const double a = bd("causal", "conventional");
  const double b = bd("causal_global", "causal");
  const bool dir_a = a < 0, dir_b = b < 0;
  const bool budget = min_steps >= kBudgetSteps;
  report(budget && dir_a && dir_b, name,
         "BD-rate causal vs conventional " + fmt(a, 3) + "% (" +
             (dir_a ? "lower" : "not lower") + "), causal+global vs causal " +
             fmt(b, 3) + "% (" + (dir_b ? "lower" : "not lower") + "); " +
             std::to_string(min_steps) + " steps per model vs " +
             std::to_string(kBudgetSteps) + " required" +
             (budget ? "" : " (budget not met)"));
}

void group_share(const std::vector<SummaryRow>& rows) {
  std::ostringstream o;
  int count = 0, above = 0;
  for (const auto& r : rows) {
    if (r.setting == "conventional") continue;
    o << (count ? ", " : "") << r.setting << "@" << r.lambda << "=" << fmt(100 * r.share, 3) << "%";
    ++count;
    above += r.share > kShareFloor;
  }
  // Reported, not asserted: the share is a trained-model observation.
  report(count > 0, "group-1 bit share",
         count ? o.str() + " (" + std::to_string(above) + "/" + std::to_string(count) +
                     " above 50%)"
               : std::string("no ratio-0.5 sweep rows"));
}

// Trained-model observations below print INFO lines and never fail the run.
void info(const std::string& name, const std::string& detail) {
  std::cout << "INFO " << name << ": " << detail << std::endl;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = 0.5 * (i + j);
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

// Per decoding position, rank correlation between full-vector and
// group-1-vector similarities over its causal set.
void half_channel_similarity(codec::Codec& codec, const std::vector<Tensor<float>>& images) {
  const int s = codec.model().config().split();
  const int m = codec.model().config().latent();
  if (s >= m) {
    info("half-channel similarity", "ungrouped model, nothing to compare");
    return;
  }
  double total = 0;
  int positions = 0;
  for (const auto& x : images) {
    const auto y = codec.encode(x).y_hat;
    const int hw = y.h() * y.w();
    auto vec = [&](int n, int c) { return y.at(0, c, n / y.w(), n % y.w()); };
    for (int n = 3; n < hw; ++n) {
      std::vector<double> full(n), half(n);
      for (int j = 0; j < n; ++j) {
        double df = 0, dh = 0;
        for (int c = 0; c < m; ++c) {
          const double d = vec(j, c) - vec(n, c);
          df += d * d;
          if (c < s) dh += d * d;
        }
        full[j] = -df;
        half[j] = -dh;
      }
      const double rho = pearson(ranks(full), ranks(half));
      if (std::isfinite(rho)) {
        total += rho;
        ++positions;
      }
    }
  }
  info("half-channel similarity",
       "mean Spearman rho " + fmt(positions ? total / positions : std::nan(""), 3) + " over " +
           std::to_string(positions) + " positions of " + std::to_string(images.size()) +
           " images (expected positive)");
}

void loss_and_lambda_order(const fs::path& dir, const std::vector<SummaryRow>& rows) {
  if (rows.empty()) return;
  std::ostringstream drops;
  int count = 0;
  for (const auto& r : rows) {
    std::ostringstream tag;
    tag << r.setting << "_l" << r.lambda;
    std::ifstream f(dir / (tag.str() + ".log.jsonl"));
    std::vector<std::pair<int, double>> log;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      log.emplace_back(j.value("step", 0), j.value("loss", 0.0));
    }
    if (log.size() < 4) continue;
    // Mean of the records around step 100 against the last three.
    double early = 0, late = 0;
    int ne = 0;
    for (const auto& [step, loss] : log) {
      if (step >= 50 && step <= 150) {
        early += loss;
        ++ne;
      }
    }
    for (std::size_t i = log.size() - 3; i < log.size(); ++i) late += log[i].second / 3;
    if (ne == 0) continue;
    early /= ne;
    drops << (count++ ? ", " : "") << tag.str() << " " << fmt(100 * (1 - late / early), 3) << "%";
  }
  info("loss decrease from step 100", drops.str());

  std::map<std::string, std::vector<SummaryRow>> by;
  for (const auto& r : rows) by[r.setting].push_back(r);
  std::ostringstream o;
  bool first = true;
  for (auto& [setting, v] : by) {
    std::sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.lambda < b.lambda; });
    int bpp_inv = 0, psnr_inv = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
      bpp_inv += v[i].bpp < v[i - 1].bpp;
      psnr_inv += v[i].psnr < v[i - 1].psnr;
    }
    o << (first ? "" : ", ") << setting << " " << bpp_inv << "/" << psnr_inv;
    first = false;
  }
  info("lambda ordering", "bpp/psnr inversions per setting: " + o.str() + " (at most 1 expected)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string checkpoint, eval_dir, sweep_dir;
  app.add_option("--checkpoint", checkpoint, "trained toy checkpoint");
  app.add_option("--eval-dir", eval_dir, "directory of evaluation PNGs");
  app.add_option("--sweep", sweep_dir, "context sweep output directory");
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<CompressionModel<float>> model;
  std::string source = "untrained desk model";
  if (!checkpoint.empty() && fs::exists(checkpoint)) {
    model = CompressionModel<float>::load(checkpoint);
    source = checkpoint;
  } else {
    model = std::make_unique<CompressionModel<float>>(desk_config(), 1);
  }
  codec::Codec codec(*model);
  std::cout << "model: " << source << std::endl;

  std::vector<Tensor<float>> eval;
  if (!eval_dir.empty() && fs::exists(eval_dir)) {
    const auto data = train::Dataset::from_directory(eval_dir);
    for (std::size_t i = 0; i < data.size(); ++i) eval.push_back(data.image(i));
  }

  const bool rt = round_trip(codec);
  std::vector<Tensor<float>> five(eval.begin(), eval.begin() + std::min<std::size_t>(5, eval.size()));
  for (int i = static_cast<int>(five.size()); i < 5; ++i) five.push_back(noise_image(128, 192, 50 + i));
  const bool eq = context_equivalence(codec, five);
  causality();
  topk_oracle();
  normalization_and_gradients();
  if (source == checkpoint && eval.size() >= 20) {
    rate_fidelity(codec, eval);
  } else {
    report(false, "rate-estimate fidelity",
           "needs a trained checkpoint and 20 evaluation images (have " +
               std::to_string(eval.size()) + ", model: " + source + ")");
  }
  std::vector<SummaryRow> rows;
  ablation(sweep_dir, &rows);
  group_share(rows);
  if (source == checkpoint) half_channel_similarity(codec, five);
  loss_and_lambda_order(sweep_dir, rows);
  report(rt && eq, "reference coder fallback",
         "all coding above used the built-in C++ range coder; no external coder linked");
  std::cout << failures << " failing" << std::endl;
  return failures == 0 ? 0 : 1;
}
