// SPDX-License-Identifier: Apache-2.0
#include "ccpc/range_coder.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "ccpc/errors.hpp"
#include "ccpc/range_coder_abi.h"

namespace ccpc::rc {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
}

bool valid_cdf(std::span<const std::uint32_t> cdf) {
  if (cdf.size() < 2 || cdf.front() != 0 || cdf.back() != kTotal) return false;
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    if (cdf[i] <= cdf[i - 1]) return false;
  }
  return true;
}

void CdfTable::validate() const {
  if (!valid_cdf(counts)) {
    throw InvalidParamsError("cdf table must rise strictly from 0 to 65536");
  }
}

void Encoder::encode(std::span<const std::uint32_t> cdf, int symbol) {
  if (symbol < 0 || static_cast<std::size_t>(symbol) + 1 >= cdf.size()) {
    throw InvalidParamsError("symbol " + std::to_string(symbol) +
                             " outside table of " +
                             std::to_string(cdf.size() - 1));
  }
  const std::uint32_t start = cdf[symbol];
  const std::uint32_t freq = cdf[symbol + 1] - start;
  if (freq == 0 || cdf[symbol + 1] > kTotal) {
    throw InvalidParamsError("zero-frequency symbol");
  }
  const std::uint32_t r = range_ >> kPrecision;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void Encoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      // The very first byte is the empty carry cache and is always zero.
      if (first_) {
        first_ = false;
      } else {
        out_.push_back(static_cast<std::uint8_t>(temp + carry));
      }
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<std::uint8_t> Encoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

Decoder::Decoder(std::span<const std::uint8_t> data) : data_(data) {
  if (data.size() < 4) {
    throw CorruptStreamError("range coder payload shorter than preamble");
  }
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t Decoder::next_byte() {
  if (pos_ >= data_.size()) {
    throw CorruptStreamError("range coder read past end of payload");
  }
  return data_[pos_++];
}

int Decoder::decode(std::span<const std::uint32_t> cdf) {
  if (cdf.size() < 2) throw InvalidParamsError("empty cdf table");
  const std::uint32_t r = range_ >> kPrecision;
  const std::uint32_t v = code_ / r;
  if (v >= kTotal) {
    throw CorruptStreamError("range decoder state outside coding interval");
  }
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), v);
  const int symbol = static_cast<int>(it - cdf.begin()) - 1;
  if (symbol < 0 || static_cast<std::size_t>(symbol) + 1 >= cdf.size()) {
    throw CorruptStreamError("range decoder value outside table");
  }
  code_ -= r * cdf[symbol];
  range_ = r * (cdf[symbol + 1] - cdf[symbol]);
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return symbol;
}

std::uint64_t measured_length(std::span<const int> symbols,
                              std::span<const CdfTable> tables) {
  if (symbols.size() != tables.size()) {
    throw DimensionError("measured_length: symbols and tables differ");
  }
  Encoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    enc.encode(tables[i], symbols[i]);
  }
  return static_cast<std::uint64_t>(enc.finish().size()) * 8;
}

double ideal_length(std::span<const int> symbols,
                    std::span<const CdfTable> tables) {
  if (symbols.size() != tables.size()) {
    throw DimensionError("ideal_length: symbols and tables differ");
  }
  double bits = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& c = tables[i].counts;
    const int s = symbols[i];
    bits -= std::log2(static_cast<double>(c[s + 1] - c[s]) / kTotal);
  }
  return bits;
}

}  // namespace ccpc::rc

// ------------------------------------------------------------------ C ABI

#ifndef CCPC_EXTERNAL_CODER

struct ccpc_rc_encoder {
  ccpc::rc::Encoder enc;
  std::vector<std::uint8_t> payload;
  bool finished = false;
};

struct ccpc_rc_decoder {
  std::vector<std::uint8_t> data;
  std::unique_ptr<ccpc::rc::Decoder> dec;
};

namespace {

std::span<const std::uint32_t> table(const std::uint32_t* cdfs,
                                     const std::uint32_t* offsets,
                                     std::size_t i) {
  return {cdfs + offsets[i], cdfs + offsets[i + 1]};
}

}  // namespace

extern "C" {

ccpc_rc_encoder* ccpc_rc_encoder_new(void) { return new ccpc_rc_encoder(); }

void ccpc_rc_encoder_free(ccpc_rc_encoder* enc) { delete enc; }

int ccpc_rc_encode(ccpc_rc_encoder* enc, const uint32_t* cdfs,
                   const uint32_t* offsets, const int32_t* symbols,
                   size_t n) {
  if (!enc || (n > 0 && (!cdfs || !offsets || !symbols))) return CCPC_RC_NULL;
  if (enc->finished) return CCPC_RC_BAD_TABLE;
  for (size_t i = 0; i < n; ++i) {
    const auto t = table(cdfs, offsets, i);
    if (!ccpc::rc::valid_cdf(t)) return CCPC_RC_BAD_TABLE;
    if (symbols[i] < 0 || static_cast<size_t>(symbols[i]) + 1 >= t.size()) {
      return CCPC_RC_BAD_SYMBOL;
    }
    enc->enc.encode(t, symbols[i]);
  }
  return CCPC_RC_OK;
}

int ccpc_rc_finish(ccpc_rc_encoder* enc, const uint8_t** data, size_t* len) {
  if (!enc || !data || !len) return CCPC_RC_NULL;
  if (!enc->finished) {
    enc->payload = enc->enc.finish();
    enc->finished = true;
  }
  *data = enc->payload.data();
  *len = enc->payload.size();
  return CCPC_RC_OK;
}

ccpc_rc_decoder* ccpc_rc_decoder_new(const uint8_t* data, size_t len) {
  if (!data && len > 0) return nullptr;
  auto* d = new ccpc_rc_decoder();
  d->data.assign(data, data + len);
  try {
    d->dec = std::make_unique<ccpc::rc::Decoder>(d->data);
  } catch (const ccpc::CorruptStreamError&) {
    delete d;
    return nullptr;
  }
  return d;
}

void ccpc_rc_decoder_free(ccpc_rc_decoder* dec) { delete dec; }

int ccpc_rc_decode(ccpc_rc_decoder* dec, const uint32_t* cdfs,
                   const uint32_t* offsets, int32_t* symbols, size_t n) {
  if (!dec || (n > 0 && (!cdfs || !offsets || !symbols))) return CCPC_RC_NULL;
  try {
    for (size_t i = 0; i < n; ++i) {
      const auto t = table(cdfs, offsets, i);
      if (!ccpc::rc::valid_cdf(t)) return CCPC_RC_BAD_TABLE;
      symbols[i] = dec->dec->decode(t);
    }
  } catch (const ccpc::CorruptStreamError&) {
    return CCPC_RC_CORRUPT;
  }
  return CCPC_RC_OK;
}

}  // extern "C"

#endif  // CCPC_EXTERNAL_CODER
