/* SPDX-License-Identifier: Apache-2.0 */
/*
 * Flat C boundary for the entropy coder backend. Tables are passed as one
 * concatenated array of cumulative counts plus n + 1 offsets; table t is
 * cdfs[offsets[t]] .. cdfs[offsets[t + 1] - 1], so a K-symbol table
 * contributes K + 1 values ending in 65536. No callbacks cross the boundary
 * and every call completes its work before returning.
 *
 * Payload format: carry-propagating range coder, 32-bit range, 64-bit low,
 * byte-wise renormalization when range < 2^24, big-endian byte order, the
 * constant leading zero byte of the carry cache is not emitted, 4 flush bytes.
 * Per symbol: r = range >> 16; low += r * cdf[s]; range = r * (cdf[s+1] -
 * cdf[s]).
 */
#ifndef CCPC_RANGE_CODER_ABI_H_
#define CCPC_RANGE_CODER_ABI_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum ccpc_rc_status {
  CCPC_RC_OK = 0,
  CCPC_RC_BAD_TABLE = 1,
  CCPC_RC_BAD_SYMBOL = 2,
  CCPC_RC_CORRUPT = 3,
  CCPC_RC_NULL = 4
};

typedef struct ccpc_rc_encoder ccpc_rc_encoder;
typedef struct ccpc_rc_decoder ccpc_rc_decoder;

ccpc_rc_encoder* ccpc_rc_encoder_new(void);
void ccpc_rc_encoder_free(ccpc_rc_encoder* enc);
/* Encodes n symbols, symbol i under table i. */
int ccpc_rc_encode(ccpc_rc_encoder* enc, const uint32_t* cdfs,
                   const uint32_t* offsets, const int32_t* symbols, size_t n);
/* Flushes and hands out the payload; valid until the encoder is freed. */
int ccpc_rc_finish(ccpc_rc_encoder* enc, const uint8_t** data, size_t* len);

/* The decoder copies `data`. */
ccpc_rc_decoder* ccpc_rc_decoder_new(const uint8_t* data, size_t len);
void ccpc_rc_decoder_free(ccpc_rc_decoder* dec);
int ccpc_rc_decode(ccpc_rc_decoder* dec, const uint32_t* cdfs,
                   const uint32_t* offsets, int32_t* symbols, size_t n);

#ifdef __cplusplus
}
#endif

#endif /* CCPC_RANGE_CODER_ABI_H_ */
