// SPDX-License-Identifier: Apache-2.0
#include "ccpc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ccpc/errors.hpp"
#include "ccpc/image_io.hpp"

namespace ccpc::train {

namespace fs = std::filesystem;

std::uint64_t seed_from_env(std::uint64_t fallback) {
  const char* v = std::getenv("CCPC_SEED");
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw InvalidParamsError("CCPC_SEED must be an integer");
  return s;
}

void TrainConfig::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) {
    throw InvalidParamsError("lambda must be positive");
  }
  if (!(lr > 0) || !(lr_final > 0)) throw InvalidParamsError("lr must be > 0");
  if (steps < 1 || batch < 1 || log_every < 1 || decay_step < 0) {
    throw InvalidParamsError("bad step/batch settings");
  }
  if (patch < kPadMultiple || patch % kPadMultiple != 0) {
    throw InvalidParamsError("patch must be a positive multiple of 64");
  }
  if (clip < 0) throw InvalidParamsError("clip must be >= 0");
  if (metric == Metric::kMsSsim && patch < 160) {
    throw InvalidParamsError("ms-ssim training needs patches of at least 160");
  }
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<nn::NamedParam<float>> params, double lr, double beta1,
           double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.param->value.size(), 0.0f);
    v_.emplace_back(p.param->value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* w = params_[i].param->value.data();
    const float* g = params_[i].param->grad.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = static_cast<float>(b1_ * m[j] + (1 - b1_) * g[j]);
      v[j] = static_cast<float>(b2_ * v[j] + (1 - b2_) * g[j] * g[j]);
      const double mh = m[j] / c1, vh = v[j] / c2;
      w[j] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<Tensor<float>> images,
                 std::vector<std::string> names)
    : images_(std::move(images)), names_(std::move(names)) {
  if (names_.empty()) {
    for (std::size_t i = 0; i < images_.size(); ++i) {
      names_.push_back("image" + std::to_string(i));
    }
  }
  if (names_.size() != images_.size()) {
    throw InvalidParamsError("dataset names and images differ in length");
  }
  for (const auto& im : images_) {
    if (im.n() != 1 || im.c() != 3) {
      throw DimensionError("dataset images must be 1x3xHxW");
    }
  }
}

Dataset Dataset::from_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      paths.push_back(e.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw IoError("no PNG files in " + dir);
  std::vector<Tensor<float>> images;
  std::vector<std::string> names;
  for (const auto& p : paths) {
    images.push_back(io::read_png(p.string()));
    names.push_back(fs::relative(p, dir).string());
  }
  return Dataset(std::move(images), std::move(names));
}

Tensor<float> Dataset::batch(int count, int patch, nn::Rng& rng) const {
  if (images_.empty()) throw InvalidParamsError("empty dataset");
  Tensor<float> out(count, 3, patch, patch);
  std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
  for (int b = 0; b < count; ++b) {
    const auto& im = images_[pick(rng)];
    const int oy = im.h() > patch
                       ? std::uniform_int_distribution<int>(0, im.h() - patch)(rng)
                       : 0;
    const int ox = im.w() > patch
                       ? std::uniform_int_distribution<int>(0, im.w() - patch)(rng)
                       : 0;
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < patch; ++y) {
        const int sy = std::min(oy + y, im.h() - 1);
        for (int x = 0; x < patch; ++x) {
          const int xx = flip ? patch - 1 - x : x;
          const int sx = std::min(ox + xx, im.w() - 1);
          out.at(b, c, y, x) = im.at(0, c, sy, sx);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool grads_finite(std::vector<nn::NamedParam<float>>& params) {
  for (auto& p : params) {
    const float* g = p.param->grad.data();
    for (std::size_t i = 0; i < p.param->grad.size(); ++i) {
      if (!std::isfinite(g[i])) return false;
    }
  }
  return true;
}

void clip_grads(std::vector<nn::NamedParam<float>>& params, double max_norm) {
  double sq = 0;
  for (auto& p : params) {
    const float* g = p.param->grad.data();
    for (std::size_t i = 0; i < p.param->grad.size(); ++i) sq += double(g[i]) * g[i];
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const float s = static_cast<float>(max_norm / norm);
  for (auto& p : params) {
    float* g = p.param->grad.data();
    for (std::size_t i = 0; i < p.param->grad.size(); ++i) g[i] *= s;
  }
}

}  // namespace

TrainSummary train(CompressionModel<float>& model, const Dataset& data,
                   const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  TrainSummary summary;
  auto params = model.parameters();
  Adam opt(params, cfg.lr);
  nn::Rng rng(cfg.seed);
  model.zero_grad();

  double acc_loss = 0, acc_bpp = 0, acc_mse = 0;
  int acc_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    if (cfg.decay_step > 0 && step > cfg.decay_step) opt.set_lr(cfg.lr_final);
    const Tensor<float> x = data.batch(cfg.batch, cfg.patch, rng);
    const std::uint64_t noise_seed = rng();
    LossReport r;
    try {
      r = model.rd_loss(x, cfg.lambda, cfg.metric, noise_seed, true);
    } catch (const NonFiniteError&) {
      model.zero_grad();
      ++summary.skipped;
      continue;
    }
    if (!grads_finite(params)) {
      model.zero_grad();
      ++summary.skipped;
      continue;
    }
    if (cfg.clip > 0) clip_grads(params, cfg.clip);
    opt.step();
    model.apply_masks();
    model.zero_grad();

    acc_loss += r.loss;
    acc_bpp += r.bpp;
    acc_mse += r.mse;
    ++acc_n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      if (acc_n == 0) continue;
      LogRecord rec;
      rec.step = step;
      rec.loss = acc_loss / acc_n;
      rec.bpp_est = acc_bpp / acc_n;
      rec.psnr = metrics::psnr_from_mse(acc_mse / acc_n);
      rec.lr = opt.lr();
      summary.log.push_back(rec);
      if (log) {
        nlohmann::json j = {{"step", rec.step},
                            {"loss", rec.loss},
                            {"bpp_est", rec.bpp_est},
                            {"psnr", rec.psnr},
                            {"lr", rec.lr}};
        *log << j.dump() << '\n' << std::flush;
      }
      acc_loss = acc_bpp = acc_mse = 0;
      acc_n = 0;
    }
  }
  model.clear_cache();
  return summary;
}

// ---------------------------------------------------------------------------

std::vector<ImageRow> evaluate(codec::Codec& codec, const Dataset& data) {
  std::vector<ImageRow> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data.image(i);
    const auto enc = codec.encode(x);
    ImageRow row;
    row.name = data.name(i);
    const double px = static_cast<double>(enc.pixels);
    row.bytes = enc.bytes.size();
    row.bpp = 8.0 * enc.bytes.size() / px;
    row.bits_g1 = enc.model_bits_y1;
    row.bits_g2 = enc.model_bits_y2;
    row.bits_z = enc.z.model_bits;
    row.bpp_est = (enc.y.model_bits + enc.z.model_bits) / px;
    row.psnr = metrics::psnr(x, enc.x_hat);
    row.msssim = std::min(x.h(), x.w()) >= 160
                     ? metrics::ms_ssim(x, enc.x_hat)
                     : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

metrics::RdPoint mean_point(const std::vector<ImageRow>& rows) {
  metrics::RdPoint p;
  if (rows.empty()) return p;
  double g1 = 0, g2 = 0;
  for (const auto& r : rows) {
    p.bpp += r.bpp;
    p.psnr += r.psnr;
    p.msssim += r.msssim;
    g1 += r.bits_g1;
    g2 += r.bits_g2;
  }
  const double n = static_cast<double>(rows.size());
  p.bpp /= n;
  p.psnr /= n;
  p.msssim /= n;
  p.bits_g1_share = g1 + g2 > 0 ? g1 / (g1 + g2) : 0;
  return p;
}

void write_rd_csv(const std::string& path, const std::vector<ImageRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "bpp,psnr,msssim,bits_g1,bits_g2,bits_z\n";
  for (const auto& r : rows) {
    f << r.bpp << ',' << r.psnr << ',' << r.msssim << ',' << r.bits_g1 << ','
      << r.bits_g2 << ',' << r.bits_z << '\n';
  }
  if (!f) throw IoError("failed writing " + path);
}

std::vector<ImageRow> read_rd_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "bpp,psnr,msssim,bits_g1,bits_g2,bits_z") {
    throw IoError(path + ": unexpected header");
  }
  std::vector<ImageRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    double v[6];
    for (double& d : v) {
      if (!std::getline(ss, cell, ',')) throw IoError(path + ": short row");
      d = std::stod(cell);
    }
    ImageRow r;
    r.bpp = v[0];
    r.psnr = v[1];
    r.msssim = v[2];
    r.bits_g1 = v[3];
    r.bits_g2 = v[4];
    r.bits_z = v[5];
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------

AblationKind parse_ablation_kind(const std::string& s) {
  if (s == "ratio") return AblationKind::kRatio;
  if (s == "k") return AblationKind::kK;
  if (s == "attention") return AblationKind::kAttention;
  if (s == "context") return AblationKind::kContext;
  throw InvalidParamsError("unknown ablation kind: " + s);
}

std::vector<AblationSetting> ablation_settings(
    AblationKind kind, const std::vector<std::string>& values,
    const ModelConfig& base) {
  std::vector<AblationSetting> out;
  for (const auto& v : values) {
    ModelConfig c = base;
    switch (kind) {
      case AblationKind::kRatio:
        c.transform.group_ratio = std::stod(v);
        break;
      case AblationKind::kK:
        c.global.enabled = true;
        if (v == "all") {
          c.global.mode = global::Mode::kDense;
        } else {
          c.global.mode = global::Mode::kTopK;
          c.global.k = std::stoi(v);
        }
        break;
      case AblationKind::kAttention:
        if (v == "none") {
          c.transform.attention_groups = 0;
        } else if (v == "single") {
          c.transform.attention_groups = 1;
        } else if (v == "group") {
          c.transform.attention_groups = 2;
        } else {
          throw InvalidParamsError("attention setting must be none|single|group");
        }
        break;
      case AblationKind::kContext:
        if (v == "conventional") {
          c.transform.group_ratio = 1.0;
          c.global.enabled = false;
        } else if (v == "causal") {
          c.transform.group_ratio = 0.5;
          c.global.enabled = false;
        } else if (v == "causal_global") {
          c.transform.group_ratio = 0.5;
          c.global.enabled = true;
        } else {
          throw InvalidParamsError(
              "context setting must be conventional|causal|causal_global");
        }
        break;
    }
    c.validate();
    out.push_back({v, c});
  }
  if (out.empty()) throw InvalidParamsError("no ablation settings");
  return out;
}

std::vector<SweepRow> ablation_sweep(
    const std::vector<AblationSetting>& settings,
    const std::vector<double>& lambdas, const TrainConfig& train_cfg,
    const Dataset& train_data, const Dataset& eval_data,
    const std::string& out_dir, std::ostream* progress, double max_seconds) {
  fs::create_directories(out_dir);
  const auto start = std::chrono::steady_clock::now();
  std::vector<SweepRow> rows;
  std::vector<std::vector<metrics::RdPoint>> curves(settings.size());
  for (std::size_t si = 0; si < settings.size(); ++si) {
    for (double lambda : lambdas) {
      std::ostringstream tag;
      tag << settings[si].label << "_l" << lambda;
      const fs::path ckpt = fs::path(out_dir) / (tag.str() + ".ckpt");
      std::unique_ptr<CompressionModel<float>> model;
      const double elapsed = std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
      if (max_seconds > 0 && elapsed > max_seconds) {
        throw BudgetExhaustedError("stopped before " + tag.str());
      }
      if (fs::exists(ckpt)) {
        model = CompressionModel<float>::load(ckpt.string());
      } else {
        model = std::make_unique<CompressionModel<float>>(settings[si].config,
                                                          train_cfg.seed);
        TrainConfig tc = train_cfg;
        tc.lambda = lambda;
        std::ofstream log(fs::path(out_dir) / (tag.str() + ".log.jsonl"));
        const auto s = train(*model, train_data, tc, &log);
        if (progress) {
          *progress << tag.str() << ": trained " << tc.steps << " steps, "
                    << s.skipped << " skipped\n";
        }
        model->save(ckpt.string());
      }
      codec::Codec codec(*model);
      const auto per_image = evaluate(codec, eval_data);
      write_rd_csv((fs::path(out_dir) / (tag.str() + ".csv")).string(), per_image);
      SweepRow row{settings[si].label, lambda, mean_point(per_image)};
      curves[si].push_back(row.point);
      rows.push_back(row);
      if (progress) {
        *progress << tag.str() << ": bpp " << row.point.bpp << " psnr "
                  << row.point.psnr << " msssim " << row.point.msssim << '\n';
      }
    }
  }

  std::ofstream summary(fs::path(out_dir) / "summary.csv");
  summary.precision(10);
  summary << "setting,lambda,bpp,psnr,msssim,bits_g1_share\n";
  for (const auto& r : rows) {
    summary << r.setting << ',' << r.lambda << ',' << r.point.bpp << ','
            << r.point.psnr << ',' << r.point.msssim << ','
            << r.point.bits_g1_share << '\n';
  }
  std::ofstream bd(fs::path(out_dir) / "bd_rate.csv");
  bd.precision(10);
  bd << "setting,reference,bd_rate_percent\n";
  for (std::size_t si = 1; si < settings.size(); ++si) {
    double v = std::numeric_limits<double>::quiet_NaN();
    try {
      v = metrics::bd_rate(curves[si], curves[0]);
    } catch (const InvalidParamsError&) {
    }
    bd << settings[si].label << ',' << settings[0].label << ',' << v << '\n';
  }
  return rows;
}

}  // namespace ccpc::train
