// SPDX-License-Identifier: Apache-2.0
//
// Bitstream encoder/decoder. The encoder computes every context in parallel
// from the full quantized latents; the decoder rebuilds them one position
// at a time in two stages (first channel group, then second group with the
// global context). Both sides evaluate the entropy path in double with the
// same kernels, so the coding tables agree bit for bit.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ccpc/model.hpp"
#include "ccpc/range_coder.hpp"

namespace ccpc::codec {

inline constexpr std::uint8_t kBitstreamVersion = 1;
/// Fixed bytes before the z payload: magic, version, quality, four u16
/// extents and len_z.
inline constexpr std::size_t kHeaderBytes = 4 + 1 + 1 + 4 * 2 + 4;

enum class QuantMode { kRound, kNoise };

/// Round half away from zero.
double round_half_away(double v);

/// kRound: nearest integer, ties away from zero. kNoise: y + U(-1/2, 1/2)
/// drawn from `rng` (required in that mode).
template <typename T>
Tensor<T> quantize(const Tensor<T>& y, QuantMode mode, nn::Rng* rng = nullptr);

struct SymbolAlphabet {
  int y_min = -64, y_max = 63;
  int z_min = -64, z_max = 63;
  void validate() const;
};

/// Integer CDF with total 2^16 from a pmf over K symbols:
/// freq_i = 1 + floor(p_i (2^16 - K)), leftover counts go to the first
/// most probable symbol.
rc::CdfTable quantize_pmf(std::span<const double> pmf);

/// Table for one latent element over [lo, hi]; the end symbols absorb the
/// tail mass of the mixture. The pmf is clamped at kProbMin and renormalized
/// before quantization (prior tables likewise).
rc::CdfTable gmm_cdf_table(std::span<const double> pi,
                           std::span<const double> mu,
                           std::span<const double> sigma, int lo, int hi);

/// One table per element of `p` (element order of GmmParams).
std::vector<rc::CdfTable> build_cdf_table(const entropy::GmmParams& p,
                                          const SymbolAlphabet& alphabet);

/// Table for one hyper-latent channel over [lo, hi].
template <typename T>
rc::CdfTable prior_cdf_table(const entropy::FactorizedPrior<T>& prior,
                             int channel, int lo, int hi);

struct Header {
  std::uint8_t version = kBitstreamVersion;
  std::uint8_t quality_id = 0;
  std::uint16_t orig_h = 0, orig_w = 0;
  std::uint16_t latent_h = 0, latent_w = 0;
};

struct Bitstream {
  Header header;
  std::vector<std::uint8_t> z_payload;
  std::vector<std::uint8_t> y_payload;
};

/// Big-endian serialization.
std::vector<std::uint8_t> serialize(const Bitstream& b);
/// Throws CorruptStreamError on bad magic, inconsistent sizes or lengths
/// that do not add up to the buffer, VersionMismatchError on a version
/// other than kBitstreamVersion.
Bitstream parse(std::span<const std::uint8_t> bytes);

/// Replicates the last row/column until H and W are multiples of `multiple`.
template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, int multiple);
template <typename T>
Tensor<T> crop(const Tensor<T>& x, int h, int w);

/// Bits for one stream: model estimate (-sum log2 P with the probability
/// floor), table entropy (-sum log2 freq / 2^16) and actual payload.
struct StreamStats {
  double model_bits = 0;
  double table_bits = 0;
  std::size_t payload_bytes = 0;
};

struct EncodeResult {
  std::vector<std::uint8_t> bytes;
  Tensor<double> y_hat, z_hat;  // clamped symbols actually coded
  Tensor<float> x_hat;          // encoder-side reconstruction, cropped
  StreamStats z, y;
  double model_bits_y1 = 0, model_bits_y2 = 0;
  std::size_t clamped = 0;  ///< symbols moved into the alphabet
  long long pixels = 0;
};

struct DecodeResult {
  Tensor<double> y_hat, z_hat;
  Tensor<float> x_hat;
  Header header;
};

class Codec {
 public:
  explicit Codec(CompressionModel<float>& model, SymbolAlphabet alphabet = {});

  /// x is 1 x 3 x H x W in [0, 1]. When `params` is given, the GMM
  /// parameters used for every latent symbol are appended to it in coding
  /// order (per element: pi[0..K), mu[0..K), sigma[0..K)).
  EncodeResult encode(const Tensor<float>& x,
                      std::vector<double>* params = nullptr);
  DecodeResult decode(std::span<const std::uint8_t> bytes,
                      std::vector<double>* params = nullptr);

  const SymbolAlphabet& alphabet() const { return alphabet_; }
  CompressionModel<float>& model() { return model_; }

 private:
  Tensor<float> reconstruct(const Tensor<double>& y_hat, int h, int w);

  CompressionModel<float>& model_;
  SymbolAlphabet alphabet_;
};

}  // namespace ccpc::codec
