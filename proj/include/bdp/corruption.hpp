// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Absorbing-state forward process over the action region of a sequence.
// Each block draws its own noise level t_b uniformly from (eps, 1] and each
// action token is independently replaced by MASK with probability t_b.
// Prefix, EOS, and clean-suffix tokens are never touched.

#pragma once

#include <cstdint>
#include <vector>

#include "bdp/block_layout.hpp"
#include "bdp/rng.hpp"
#include "bdp/token_codec.hpp"

namespace bdp {

// Noise levels below this are clamped away so the 1/t loss weight stays finite.
inline constexpr double kTimestepFloor = 1e-3;

struct CorruptionRecord {
    std::vector<double> timesteps;     // t_b per block, in (kTimestepFloor, 1]
    std::vector<uint8_t> masked;       // per position of the full sequence
    std::vector<double> loss_weights;  // 1/t_b at masked action positions, 0 elsewhere
    uint64_t root_seed = 0;

    int masked_count(const BlockLayout &layout, int block) const {
        int n = 0;
        int begin = layout.action_begin() + block * layout.block_len;
        for (int i = begin; i < begin + layout.block_len; ++i) n += masked[i];
        return n;
    }
};

// One t_b per block: t = eps + u * (1 - eps) with u in [0, 1).
std::vector<double> sample_timesteps(int block_count, Rng &rng);

// Replaces ids[i] with MASK where record.masked[i] is set. Masking draws use
// one substream per block so a block's pattern depends only on the root seed
// and its own index.
CorruptionRecord corrupt(std::vector<int> &ids, const BlockLayout &layout,
                         const std::vector<double> &timesteps, const Vocab &vocab, Rng &rng);

// Convenience wrapper: sample timesteps, then corrupt.
CorruptionRecord corrupt(std::vector<int> &ids, const BlockLayout &layout, const Vocab &vocab,
                         Rng &rng);

}  // namespace bdp
