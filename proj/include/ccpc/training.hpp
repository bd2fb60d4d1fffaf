// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "ccpc/codec.hpp"
#include "ccpc/metrics.hpp"
#include "ccpc/model.hpp"

namespace ccpc::train {

/// Seed from CCPC_SEED, or `fallback` when unset.
std::uint64_t seed_from_env(std::uint64_t fallback = 1);

struct TrainConfig {
  double lambda = 0.013 * 255 * 255 / 100;  // overwritten by callers
  Metric metric = Metric::kMse;
  double lr = 5e-5;
  double lr_final = 1e-5;
  int decay_step = 0;  ///< step at which lr drops to lr_final; 0 = never
  int steps = 1000;
  int batch = 8;
  int patch = 128;
  std::uint64_t seed = 1;
  int log_every = 50;
  double clip = 1.0;  ///< global gradient-norm clip; 0 disables

  void validate() const;
};

class Adam {
 public:
  Adam(std::vector<nn::NamedParam<float>> params, double lr,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<nn::NamedParam<float>> params_;
  std::vector<std::vector<float>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
};

/// Training images held in memory; batches are random crops with random
/// horizontal flips.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Tensor<float>> images,
                   std::vector<std::string> names = {});
  /// Every *.png below `dir`, sorted by path.
  static Dataset from_directory(const std::string& dir);

  std::size_t size() const { return images_.size(); }
  const Tensor<float>& image(std::size_t i) const { return images_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<float> batch(int count, int patch, nn::Rng& rng) const;

 private:
  std::vector<Tensor<float>> images_;
  std::vector<std::string> names_;
};

struct LogRecord {
  int step = 0;
  double loss = 0, bpp_est = 0, psnr = 0, lr = 0;
};

struct TrainSummary {
  std::vector<LogRecord> log;
  int skipped = 0;  ///< steps dropped by the non-finite guard
};

/// Runs cfg.steps Adam steps. Writes one JSON record per log interval to
/// `log` when given.
TrainSummary train(CompressionModel<float>& model, const Dataset& data,
                   const TrainConfig& cfg, std::ostream* log = nullptr);

struct ImageRow {
  std::string name;
  double bpp = 0;      ///< actual file bits / pixels
  double bpp_est = 0;  ///< model bits (y and z) / pixels
  double psnr = 0;
  double msssim = 0;
  double bits_g1 = 0, bits_g2 = 0, bits_z = 0;
  std::size_t bytes = 0;
};

/// Encodes each image and measures it against the encoder-side
/// reconstruction (identical to the decoder output).
std::vector<ImageRow> evaluate(codec::Codec& codec, const Dataset& data);

metrics::RdPoint mean_point(const std::vector<ImageRow>& rows);

/// Columns bpp,psnr,msssim,bits_g1,bits_g2,bits_z.
void write_rd_csv(const std::string& path, const std::vector<ImageRow>& rows);
std::vector<ImageRow> read_rd_csv(const std::string& path);

enum class AblationKind { kRatio, kK, kAttention, kContext };
AblationKind parse_ablation_kind(const std::string& s);

struct AblationSetting {
  std::string label;
  ModelConfig config;
};

/// Variants of `base` for a sweep. kRatio takes ratios ("0.5", "1"), kK
/// takes counts or "all", kAttention takes "none", "single", "group" and
/// kContext takes "conventional", "causal", "causal_global".
std::vector<AblationSetting> ablation_settings(
    AblationKind kind, const std::vector<std::string>& values,
    const ModelConfig& base);

struct SweepRow {
  std::string setting;
  double lambda = 0;
  metrics::RdPoint point;
};

/// Trains and evaluates every (setting, lambda) pair with the same seed and
/// budget. Checkpoints, per-image CSVs, summary.csv and bd_rate.csv (each
/// setting against the first) go to `out_dir`. Existing checkpoints are
/// reused so interrupted sweeps resume. With max_seconds > 0, throws
/// BudgetExhaustedError before starting a variant once that much wall time
/// has passed.
std::vector<SweepRow> ablation_sweep(
    const std::vector<AblationSetting>& settings,
    const std::vector<double>& lambdas, const TrainConfig& train_cfg,
    const Dataset& train_data, const Dataset& eval_data,
    const std::string& out_dir, std::ostream* progress = nullptr,
    double max_seconds = 0);

}  // namespace ccpc::train
