// SPDX-License-Identifier: Apache-2.0
//
// ccpc command line: train, compress, decompress, eval, ablate.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <CLI11.hpp>

#include "ccpc/codec.hpp"
#include "ccpc/errors.hpp"
#include "ccpc/image_io.hpp"
#include "ccpc/training.hpp"

using namespace ccpc;

namespace {

ModelConfig desk_config() {
  ModelConfig c;
  c.transform.N = 64;
  c.transform.M = 32;
  c.transform.F = 64;
  return c;
}

ModelConfig base_config(const std::string& path) {
  return path.empty() ? desk_config() : load_config_file(path);
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()),
          static_cast<std::streamsize>(b.size()));
  if (!f) throw IoError("cannot write " + path);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct TrainFlags {
  std::string config, metric = "mse";
  train::TrainConfig tc;

  void add(CLI::App* app) {
    app->add_option("-c,--config", config, "model config file (key = value)");
    app->add_option("--metric", metric, "mse or msssim");
    app->add_option("--steps", tc.steps);
    app->add_option("--batch", tc.batch);
    app->add_option("--patch", tc.patch);
    app->add_option("--lr", tc.lr);
    app->add_option("--lr-final", tc.lr_final);
    app->add_option("--decay-step", tc.decay_step, "0 keeps --lr throughout");
    app->add_option("--clip", tc.clip, "gradient norm clip, 0 disables");
    app->add_option("--log-every", tc.log_every);
  }
  train::TrainConfig resolve() {
    tc.metric = parse_metric(metric);
    tc.seed = train::seed_from_env(1);
    return tc;
  }
};

void print_point(const metrics::RdPoint& p) {
  std::printf("bpp %.4f  psnr %.3f dB  ms-ssim %.5f  group-1 share %.3f\n",
              p.bpp, p.psnr, p.msssim, p.bits_g1_share);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned image codec with causal contexts"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  TrainFlags tflags;
  std::string train_dir, train_out, train_log, train_init;
  double train_lambda = 845;
  tflags.add(train_cmd);
  train_cmd->add_option("-d,--data", train_dir, "directory of PNG images")
      ->required();
  train_cmd->add_option("-o,--out", train_out, "checkpoint to write")->required();
  train_cmd->add_option("--lambda", train_lambda);
  train_cmd->add_option("--log", train_log, "JSON-lines log (default stdout)");
  train_cmd->add_option("--init", train_init, "start from this checkpoint");

  // compress / decompress
  auto* comp = app.add_subcommand("compress", "PNG to bitstream");
  std::string c_in, c_out, c_model;
  comp->add_option("-i", c_in, "input PNG")->required();
  comp->add_option("-o", c_out, "output bitstream")->required();
  comp->add_option("-m", c_model, "checkpoint")->required();

  auto* decomp = app.add_subcommand("decompress", "bitstream to PNG");
  std::string d_in, d_out, d_model;
  decomp->add_option("-i", d_in, "input bitstream")->required();
  decomp->add_option("-o", d_out, "output PNG")->required();
  decomp->add_option("-m", d_model, "checkpoint")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a directory");
  std::string e_dir, e_model, e_rd, e_k, e_distance;
  eval_cmd->add_option("-d", e_dir, "directory of PNG images")->required();
  eval_cmd->add_option("-m", e_model, "checkpoint")->required();
  eval_cmd->add_option("--emit-rd", e_rd, "per-image CSV");
  eval_cmd->add_option("--k", e_k, "override reference count (number or all)");
  eval_cmd->add_option("--distance", e_distance, "override: neg_l2 or cosine");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train and compare variants");
  TrainFlags aflags;
  aflags.tc.steps = 1000;
  std::string a_ratio, a_k, a_att, a_ctx, a_lambdas = "845", a_train, a_eval,
                                               a_out = "ablation";
  double a_hours = 0;
  aflags.add(abl);
  auto* o_ratio = abl->add_option("--ratio", a_ratio, "e.g. 0.25,0.5,1");
  auto* o_k = abl->add_option("--k", a_k, "e.g. 2,4,6,all");
  auto* o_att = abl->add_option("--attention", a_att, "none,single,group");
  auto* o_ctx = abl->add_option("--context", a_ctx,
                                "conventional,causal,causal_global");
  o_ratio->excludes(o_k, o_att, o_ctx);
  o_k->excludes(o_att, o_ctx);
  o_att->excludes(o_ctx);
  abl->add_option("--lambdas", a_lambdas, "comma separated");
  abl->add_option("--train-dir", a_train)->required();
  abl->add_option("--eval-dir", a_eval)->required();
  abl->add_option("--out", a_out, "output directory");
  abl->add_option("--max-hours", a_hours, "wall-clock budget, 0 = none");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      auto tc = tflags.resolve();
      tc.lambda = train_lambda;
      auto data = train::Dataset::from_directory(train_dir);
      std::unique_ptr<CompressionModel<float>> model;
      if (!train_init.empty()) {
        model = CompressionModel<float>::load(train_init);
      } else {
        model = std::make_unique<CompressionModel<float>>(
            base_config(tflags.config), tc.seed);
      }
      std::ofstream log_file;
      std::ostream* log = &std::cout;
      if (!train_log.empty()) {
        log_file.open(train_log);
        if (!log_file) throw IoError("cannot write " + train_log);
        log = &log_file;
      }
      const auto s = train::train(*model, data, tc, log);
      model->save(train_out);
      std::cerr << "saved " << train_out << " (" << s.skipped
                << " steps skipped)\n";
    } else if (*comp) {
      auto model = CompressionModel<float>::load(c_model);
      codec::Codec codec(*model);
      const auto x = io::read_png(c_in);
      const auto r = codec.encode(x);
      write_bytes(c_out, r.bytes);
      std::fprintf(stderr, "%zu bytes, %.4f bpp\n", r.bytes.size(),
                   8.0 * r.bytes.size() / r.pixels);
    } else if (*decomp) {
      auto model = CompressionModel<float>::load(d_model);
      codec::Codec codec(*model);
      const auto r = codec.decode(read_bytes(d_in));
      io::write_png(d_out, r.x_hat);
    } else if (*eval_cmd) {
      auto model = CompressionModel<float>::load(e_model);
      if (!e_k.empty() || !e_distance.empty()) {
        auto g = model->config().global;
        if (e_k == "all") {
          g.mode = global::Mode::kDense;
        } else if (!e_k.empty()) {
          g.mode = global::Mode::kTopK;
          g.k = std::stoi(e_k);
        }
        if (!e_distance.empty()) g.distance = global::parse_distance(e_distance);
        model->set_global_config(g);
      }
      codec::Codec codec(*model);
      const auto rows =
          train::evaluate(codec, train::Dataset::from_directory(e_dir));
      if (!e_rd.empty()) train::write_rd_csv(e_rd, rows);
      print_point(train::mean_point(rows));
    } else if (*abl) {
      train::AblationKind kind;
      std::string values;
      if (!a_ratio.empty()) {
        kind = train::AblationKind::kRatio;
        values = a_ratio;
      } else if (!a_k.empty()) {
        kind = train::AblationKind::kK;
        values = a_k;
      } else if (!a_att.empty()) {
        kind = train::AblationKind::kAttention;
        values = a_att;
      } else if (!a_ctx.empty()) {
        kind = train::AblationKind::kContext;
        values = a_ctx;
      } else {
        throw InvalidParamsError(
            "ablate needs one of --ratio, --k, --attention, --context");
      }
      auto tc = aflags.resolve();
      std::vector<double> lambdas;
      for (const auto& l : split_list(a_lambdas)) lambdas.push_back(std::stod(l));
      if (lambdas.empty()) throw InvalidParamsError("no lambdas given");
      const auto settings = train::ablation_settings(
          kind, split_list(values), base_config(aflags.config));
      const auto rows = train::ablation_sweep(
          settings, lambdas, tc, train::Dataset::from_directory(a_train),
          train::Dataset::from_directory(a_eval), a_out, &std::cerr,
          a_hours * 3600.0);
      std::printf("setting,lambda,bpp,psnr,msssim,bits_g1_share\n");
      for (const auto& r : rows) {
        std::printf("%s,%g,%.6f,%.4f,%.6f,%.4f\n", r.setting.c_str(), r.lambda,
                    r.point.bpp, r.point.psnr, r.point.msssim,
                    r.point.bits_g1_share);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "ccpc: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
