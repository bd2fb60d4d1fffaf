// SPDX-License-Identifier: Apache-2.0
#include "ccpc/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ccpc/metrics.hpp"

namespace ccpc {

using nlohmann::json;

void ModelConfig::validate() const {
  transform.validate();
  global.validate();
  if (mixtures < 1) throw InvalidParamsError("mixtures must be >= 1");
  if (context_channels < 0 || global_width < 0) {
    throw InvalidParamsError("channel counts must be >= 0");
  }
  if (quality_id < 0 || quality_id > 255) {
    throw InvalidParamsError("quality_id must fit in a byte");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["N"] = transform.N;
  j["M"] = transform.M;
  j["group_ratio"] = transform.group_ratio;
  j["attention_groups"] = transform.attention_groups;
  j["F"] = transform.F;
  j["context_channels"] = context_channels;
  j["global_width"] = global_width;
  j["mixtures"] = mixtures;
  j["quality_id"] = quality_id;
  j["global"] = {{"enabled", global.enabled},
                 {"mode", global::to_string(global.mode)},
                 {"k", global.k},
                 {"distance", global::to_string(global.distance)}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.transform.N = j.at("N").get<int>();
    c.transform.M = j.at("M").get<int>();
    c.transform.group_ratio = j.at("group_ratio").get<double>();
    c.transform.attention_groups = j.at("attention_groups").get<int>();
    c.transform.F = j.at("F").get<int>();
    c.context_channels = j.at("context_channels").get<int>();
    c.global_width = j.at("global_width").get<int>();
    c.mixtures = j.at("mixtures").get<int>();
    c.quality_id = j.at("quality_id").get<int>();
    const auto& g = j.at("global");
    c.global.enabled = g.at("enabled").get<bool>();
    c.global.mode = global::parse_mode(g.at("mode").get<std::string>());
    c.global.k = g.at("k").get<int>();
    c.global.distance =
        global::parse_distance(g.at("distance").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw InvalidParamsError("expected a boolean, got '" + v + "'");
}

}  // namespace

ModelConfig parse_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidParamsError("config line " + std::to_string(lineno) +
                               ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "N") c.transform.N = std::stoi(val);
      else if (key == "M") c.transform.M = std::stoi(val);
      else if (key == "group_ratio") c.transform.group_ratio = std::stod(val);
      else if (key == "F") c.transform.F = std::stoi(val);
      else if (key == "attention_groups") c.transform.attention_groups = std::stoi(val);
      else if (key == "context_channels") c.context_channels = std::stoi(val);
      else if (key == "global_width") c.global_width = std::stoi(val);
      else if (key == "mixtures") c.mixtures = std::stoi(val);
      else if (key == "global") c.global.enabled = parse_bool(val);
      else if (key == "k") c.global.k = std::stoi(val);
      else if (key == "mode") c.global.mode = global::parse_mode(val);
      else if (key == "distance") c.global.distance = global::parse_distance(val);
      else if (key == "quality_id") c.quality_id = std::stoi(val);
      else throw InvalidParamsError("unknown config key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const InvalidParamsError*>(&e)) throw;
      throw InvalidParamsError("config line " + std::to_string(lineno) +
                               ": bad value '" + val + "'");
    }
  }
  c.validate();
  return c;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ModelConfig& c) {
  std::ostringstream o;
  o << "N = " << c.transform.N << "\n"
    << "M = " << c.transform.M << "\n"
    << "group_ratio = " << c.transform.group_ratio << "\n"
    << "F = " << c.transform.features() << "\n"
    << "attention_groups = " << c.transform.attention_groups << "\n"
    << "context_channels = " << c.ctx() << "\n"
    << "global_width = " << c.gwidth() << "\n"
    << "mixtures = " << c.mixtures << "\n"
    << "global = " << (c.global.enabled ? "on" : "off") << "\n"
    << "k = " << c.global.k << "\n"
    << "mode = " << global::to_string(c.global.mode) << "\n"
    << "distance = " << global::to_string(c.global.distance) << "\n"
    << "quality_id = " << c.quality_id << "\n";
  return o.str();
}

Metric parse_metric(const std::string& s) {
  if (s == "mse") return Metric::kMse;
  if (s == "msssim" || s == "ms-ssim") return Metric::kMsSsim;
  throw InvalidParamsError("unknown metric '" + s + "'");
}

template <typename T>
Tensor<T> round_tensor(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::round(x[i]);
  return out;
}

// ------------------------------------------------------ CompressionModel

template <typename T>
CompressionModel<T>::CompressionModel(const ModelConfig& cfg,
                                      std::uint64_t seed)
    : cfg_(cfg) {
  cfg.validate();
  nn::Rng rng(seed);
  const auto& tc = cfg.transform;
  const int m = tc.M, s = cfg.split(), f = tc.features(), ctx = cfg.ctx();
  g_a_ = std::make_unique<AnalysisTransform<T>>(tc, rng);
  g_s_ = std::make_unique<SynthesisTransform<T>>(tc, rng);
  h_a_ = std::make_unique<HyperAnalysis<T>>(tc, rng);
  h_s_ = std::make_unique<HyperSynthesis<T>>(tc, rng);
  prior_ = std::make_unique<entropy::FactorizedPrior<T>>(tc.N, rng);
  ctx1_ = std::make_unique<context::MaskedConv<T>>(
      m, ctx, context::MaskSpec{5, context::MaskMode::kStandard, 0}, rng);
  if (cfg.grouped()) {
    ctx2_ = std::make_unique<context::MaskedConv<T>>(
        m, ctx, context::MaskSpec{5, context::MaskMode::kImproved, s}, rng);
    if (cfg.use_global()) {
      glob_ = std::make_unique<global::GlobalPrediction<T>>(
          m, s, cfg.gwidth(), cfg.global, rng);
    }
  }
  head1_ = std::make_unique<entropy::ParamHead<T>>(f + ctx, s, cfg.mixtures,
                                                   rng);
  if (cfg.grouped()) {
    const int in2 = f + ctx + (cfg.use_global() ? cfg.gwidth() : 0);
    head2_ = std::make_unique<entropy::ParamHead<T>>(in2, m - s, cfg.mixtures,
                                                     rng);
  }
}

template <typename T>
std::vector<nn::NamedParam<T>> CompressionModel<T>::parameters() {
  std::vector<nn::NamedParam<T>> out;
  g_a_->collect("g_a", out);
  g_s_->collect("g_s", out);
  h_a_->collect("h_a", out);
  h_s_->collect("h_s", out);
  prior_->collect("prior", out);
  ctx1_->collect("ctx1", out);
  if (ctx2_) ctx2_->collect("ctx2", out);
  if (glob_) glob_->collect("global", out);
  head1_->collect("head1", out);
  if (head2_) head2_->collect("head2", out);
  return out;
}

template <typename T>
void CompressionModel<T>::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

template <typename T>
void CompressionModel<T>::apply_masks() {
  ctx1_->apply_mask();
  if (ctx2_) ctx2_->apply_mask();
}

template <typename T>
void CompressionModel<T>::set_global_config(const global::GlobalConfig& g) {
  if (g.enabled != cfg_.global.enabled) {
    throw InvalidParamsError(
        "global prediction cannot be toggled on a trained model");
  }
  g.validate();
  cfg_.global = g;
  if (glob_) glob_->set_config(g);
}

template <typename T>
void CompressionModel<T>::clear_cache() {
  g_a_->clear_cache();
  g_s_->clear_cache();
  h_a_->clear_cache();
  h_s_->clear_cache();
  ctx1_->clear_cache();
  if (ctx2_) ctx2_->clear_cache();
  if (glob_) glob_->clear_cache();
  head1_->clear_cache();
  if (head2_) head2_->clear_cache();
}

namespace {

template <typename T>
std::vector<double> flat(const Tensor<T>& t) {
  return std::vector<double>(t.vec().begin(), t.vec().end());
}

void scale(entropy::GmmGrad& g, double k) {
  for (auto* v : {&g.d_pi, &g.d_mu, &g.d_sigma, &g.d_y}) {
    for (auto& e : *v) e *= k;
  }
}

template <typename T>
void add_channels(Tensor<T>& dst, const Tensor<T>& src, int begin,
                  int src_begin, int count) {
  const std::size_t plane = dst.shape().plane();
  for (int n = 0; n < dst.n(); ++n) {
    for (int c = 0; c < count; ++c) {
      T* d = dst.plane(n, begin + c);
      const T* s = src.plane(n, src_begin + c);
      for (std::size_t i = 0; i < plane; ++i) d[i] += s[i];
    }
  }
}

template <typename T>
void add_vector_to_channels(Tensor<T>& dst, const std::vector<double>& v,
                            int begin, int count) {
  const std::size_t plane = dst.shape().plane();
  std::size_t i = 0;
  for (int n = 0; n < dst.n(); ++n) {
    for (int c = 0; c < count; ++c) {
      T* d = dst.plane(n, begin + c);
      for (std::size_t p = 0; p < plane; ++p) d[p] += static_cast<T>(v[i++]);
    }
  }
}

}  // namespace

template <typename T>
LossReport CompressionModel<T>::rd_loss(const Tensor<T>& x, double lambda,
                                        Metric metric,
                                        std::uint64_t noise_seed,
                                        bool backward) {
  if (x.c() != 3) throw DimensionError("rd_loss input " + x.shape().str());
  const int m = cfg_.transform.M, s = cfg_.split(), f = cfg_.transform.features();
  const int ctx = cfg_.ctx();
  const double pixels = static_cast<double>(x.n()) * x.h() * x.w();
  nn::Rng noise(noise_seed);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  auto add_noise = [&](const Tensor<T>& t) {
    Tensor<T> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      out[i] = static_cast<T>(static_cast<double>(t[i]) + unif(noise));
    }
    return out;
  };

  LossReport rep;
  const Tensor<T> y = g_a_->forward(x);
  const Tensor<T> z = h_a_->forward(y);
  const Tensor<T> z_noisy = add_noise(z);
  const Tensor<T> y_noisy = add_noise(y);
  const Tensor<T> z_hat = round_tensor(z);
  const Tensor<T> y_hat = round_tensor(y);

  Tensor<T> g_z_rate;
  rep.bits_z = prior_->bits(z_noisy, backward ? &g_z_rate : nullptr,
                            1.0 / pixels);
  const Tensor<T> feats = h_s_->forward(z_hat);

  const Tensor<T> c1 = ctx1_->forward(y_hat);
  const Tensor<T>* in1[] = {&feats, &c1};
  const Tensor<T> raw1 = head1_->forward(concat_channels<T>(in1));
  const entropy::GmmParams p1 = entropy::gmm_from_raw(raw1, s, cfg_.mixtures);
  entropy::GmmGrad grad1, grad2;
  rep.bits_y1 = entropy::gmm_bits(flat(slice_channels(y_noisy, 0, s)), p1,
                                  backward ? &grad1 : nullptr);

  Tensor<T> raw2;
  entropy::GmmParams p2;
  if (cfg_.grouped()) {
    const Tensor<T> c2 = ctx2_->forward(y_hat);
    std::vector<const Tensor<T>*> in2 = {&feats, &c2};
    Tensor<T> c3;
    if (glob_) {
      c3 = glob_->forward(y_hat);
      in2.push_back(&c3);
    }
    raw2 = head2_->forward(concat_channels<T>(in2));
    p2 = entropy::gmm_from_raw(raw2, m - s, cfg_.mixtures);
    rep.bits_y2 = entropy::gmm_bits(flat(slice_channels(y_noisy, s, m)), p2,
                                    backward ? &grad2 : nullptr);
  }

  const Tensor<T> x_hat = g_s_->forward(y_hat);
  rep.mse = metrics::mse(x, x_hat);
  Tensor<T> g_ssim;
  if (metric == Metric::kMse) {
    rep.distortion = rep.mse;
  } else {
    rep.ms_ssim = metrics::ms_ssim(x, x_hat, backward ? &g_ssim : nullptr);
    rep.distortion = 1.0 - rep.ms_ssim;
  }
  rep.bpp = (rep.bits_y1 + rep.bits_y2 + rep.bits_z) / pixels;
  rep.loss = rep.bpp + lambda * rep.distortion;
  if (!std::isfinite(rep.loss)) {
    clear_cache();
    throw NonFiniteError("non-finite rd loss");
  }
  if (!backward) {
    clear_cache();
    return rep;
  }

  const double inv = 1.0 / pixels;
  Tensor<T> g_y(y.shape());
  Tensor<T> g_yhat(y.shape());
  Tensor<T> g_feats(feats.shape());

  scale(grad1, inv);
  {
    const Tensor<T> g_in = head1_->backward(
        entropy::gmm_raw_backward(raw1, p1, grad1));
    add_channels(g_feats, g_in, 0, 0, f);
    add_inplace(g_yhat, ctx1_->backward(slice_channels(g_in, f, f + ctx)));
    add_vector_to_channels(g_y, grad1.d_y, 0, s);
  }
  if (cfg_.grouped()) {
    scale(grad2, inv);
    const Tensor<T> g_in = head2_->backward(
        entropy::gmm_raw_backward(raw2, p2, grad2));
    add_channels(g_feats, g_in, 0, 0, f);
    add_inplace(g_yhat, ctx2_->backward(slice_channels(g_in, f, f + ctx)));
    if (glob_) {
      add_inplace(g_yhat, glob_->backward(slice_channels(
                              g_in, f + ctx, f + ctx + glob_->width())));
    }
    add_vector_to_channels(g_y, grad2.d_y, s, m - s);
  }

  Tensor<T> g_xhat(x_hat.shape());
  if (metric == Metric::kMse) {
    const double k = lambda * 2.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      g_xhat[i] = static_cast<T>(k * (static_cast<double>(x_hat[i]) -
                                      static_cast<double>(x[i])));
    }
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      g_xhat[i] = static_cast<T>(-lambda * static_cast<double>(g_ssim[i]));
    }
  }
  add_inplace(g_yhat, g_s_->backward(g_xhat));
  add_inplace(g_y, g_yhat);

  Tensor<T> g_z = h_s_->backward(g_feats);
  add_inplace(g_z, g_z_rate);
  add_inplace(g_y, h_a_->backward(g_z));
  g_a_->backward(g_y);
  clear_cache();
  return rep;
}

// ------------------------------------------------------------ checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'C', 'P', 'C', 'C', 'K', 'P', 'T'};

template <typename V>
void put(std::ostream& o, V v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw IoError("checkpoint truncated");
  }
  return v;
}

}  // namespace

template <typename T>
void CompressionModel<T>::save(const std::string& path) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw IoError("cannot write checkpoint " + path);
  o.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(o, kCheckpointVersion);
  const std::string cfg = cfg_.to_json();
  put<std::uint32_t>(o, static_cast<std::uint32_t>(cfg.size()));
  o.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = parameters();
  put<std::uint32_t>(o, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(o, static_cast<std::uint32_t>(p.name.size()));
    o.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape sh = p.param->value.shape();
    for (int d : {sh.n, sh.c, sh.h, sh.w}) put<std::uint32_t>(o, d);
    for (T v : p.param->value.vec()) put<float>(o, static_cast<float>(v));
  }
  if (!o) throw IoError("failed writing checkpoint " + path);
}

template <typename T>
std::unique_ptr<CompressionModel<T>> CompressionModel<T>::load(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(path + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) +
                               ", expected " +
                               std::to_string(kCheckpointVersion));
  }
  std::string cfg(get<std::uint32_t>(in), '\0');
  if (!in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()))) {
    throw IoError("checkpoint truncated");
  }
  auto model = std::make_unique<CompressionModel<T>>(
      ModelConfig::from_json(cfg), 0);
  std::map<std::string, nn::Param<T>*> by_name;
  for (auto& p : model->parameters()) by_name[p.name] = p.param;
  const auto count = get<std::uint32_t>(in);
  if (count != by_name.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) +
                  " arrays, model has " + std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) {
      throw IoError("checkpoint truncated");
    }
    Shape sh;
    sh.n = static_cast<int>(get<std::uint32_t>(in));
    sh.c = static_cast<int>(get<std::uint32_t>(in));
    sh.h = static_cast<int>(get<std::uint32_t>(in));
    sh.w = static_cast<int>(get<std::uint32_t>(in));
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("unexpected array " + name);
    if (it->second->value.shape() != sh) {
      throw IoError("array " + name + " has shape " + sh.str());
    }
    for (auto& v : it->second->value.vec()) v = static_cast<T>(get<float>(in));
  }
  model->apply_masks();
  return model;
}

template class CompressionModel<float>;
template class CompressionModel<double>;
template Tensor<float> round_tensor<float>(const Tensor<float>&);
template Tensor<double> round_tensor<double>(const Tensor<double>&);

}  // namespace ccpc
