// SPDX-License-Identifier: Apache-2.0
//
// Reference range coder over 16-bit cumulative frequency tables. This is the
// in-tree fallback; an external backend implementing range_coder_abi.h must
// produce identical bytes.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ccpc::rc {

inline constexpr int kPrecision = 16;
inline constexpr std::uint32_t kTotal = 1u << kPrecision;

/// Cumulative counts: first 0, last kTotal, strictly increasing.
struct CdfTable {
  std::vector<std::uint32_t> counts;

  int num_symbols() const { return static_cast<int>(counts.size()) - 1; }
  /// Throws InvalidParamsError when the invariants do not hold.
  void validate() const;
};

bool valid_cdf(std::span<const std::uint32_t> cdf);

class Encoder {
 public:
  /// Encodes `symbol` under `cdf` (K + 1 cumulative counts). The table is
  /// not re-validated here; callers pass tables from build_cdf or validate
  /// them once.
  void encode(std::span<const std::uint32_t> cdf, int symbol);
  void encode(const CdfTable& t, int symbol) { encode(t.counts, symbol); }
  /// Flushes the state; the encoder must not be used afterwards.
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool first_ = true;
  std::vector<std::uint8_t> out_;
};

class Decoder {
 public:
  /// Throws CorruptStreamError if `data` is shorter than the 4-byte preamble.
  explicit Decoder(std::span<const std::uint8_t> data);
  /// Throws CorruptStreamError when the stream cannot have been produced by
  /// the matching encoder (out-of-interval state or reading past the end).
  int decode(std::span<const std::uint32_t> cdf);
  int decode(const CdfTable& t) { return decode(t.counts); }
  std::size_t consumed() const { return pos_; }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

/// Payload size in bits for coding `symbols[i]` under `tables[i]`.
std::uint64_t measured_length(std::span<const int> symbols,
                              std::span<const CdfTable> tables);

/// -sum log2 of the quantized symbol frequencies.
double ideal_length(std::span<const int> symbols,
                    std::span<const CdfTable> tables);

}  // namespace ccpc::rc
