// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoding: block-wise iterative denoising with prefix KV-cache reuse and
// confidence-ranked commits, plus two baselines (whole-sequence denoising,
// token-by-token autoregression) behind a shared config and trace type.

#pragma once

#include <cstdint>
#include <vector>

#include "bdp/net.hpp"
#include "bdp/rng.hpp"
#include "bdp/token_codec.hpp"

namespace bdp {

enum class DecoderKind { block_diffusion, full_diffusion, autoregressive };

struct DecodeConfig {
    DecoderKind kind = DecoderKind::block_diffusion;
    int block_count = 2;
    int block_len = 7;
    // Denoise passes: per block for block_diffusion (<= block_len), total for
    // full_diffusion (<= block_count*block_len). Ignored by autoregressive.
    int steps = 2;
    bool greedy = true;
    double temperature = 1.0;  // used when greedy=false
    uint64_t seed = 0;
    // Must match the training alignment. Shifted decode reads the prediction
    // for a position from the row before it, so each refinement pass carries
    // one extra context row.
    bool token_shift = false;
    bool capture_logits = false;  // store per-pass inputs and logits in the trace
    int mask_id = 256;            // fill id for not-yet-committed positions

    void validate() const;
};

struct DecodeStep {
    int block = -1;  // -1 for whole-sequence and autoregressive passes
    std::vector<int> positions;  // action-region offsets committed this pass
    std::vector<int> ids;
    std::vector<double> confidences;
    int nfe_after = 0;
    int cache_len = 0;
    // capture_logits only: the action-region ids fed this pass and the raw
    // logits of the pass's query rows
    std::vector<int> input_ids;
    Mat logits;
};

struct DecodeTrace {
    std::vector<DecodeStep> steps;
    std::vector<int> tokens;  // final action tokens, block_count*block_len
    int nfe = 0;
    int64_t token_passes = 0;
    double wall_seconds = 0.0;
};

// ceil(remaining / steps_remaining); the per-pass commit count that empties
// the masked set in exactly the remaining passes.
int commit_schedule(int remaining, int steps_remaining);

template <typename S>
std::vector<int> decode_block_diffusion(const ParamsT<S> &params,
                                        const std::vector<int> &prefix_ids,
                                        const DecodeConfig &config, Rng &rng,
                                        DecodeTrace *trace = nullptr);

template <typename S>
std::vector<int> decode_full_diffusion(const ParamsT<S> &params,
                                       const std::vector<int> &prefix_ids,
                                       const DecodeConfig &config, Rng &rng,
                                       DecodeTrace *trace = nullptr);

template <typename S>
std::vector<int> decode_autoregressive(const ParamsT<S> &params,
                                       const std::vector<int> &prefix_ids,
                                       const DecodeConfig &config, Rng &rng,
                                       DecodeTrace *trace = nullptr);

// Dispatch on config.kind.
template <typename S>
std::vector<int> decode(const ParamsT<S> &params, const std::vector<int> &prefix_ids,
                        const DecodeConfig &config, Rng &rng, DecodeTrace *trace = nullptr);

}  // namespace bdp
