// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Boolean attention permission matrices for the three training regimes and
// the decode-side baselines, plus position ids and loss-target alignment.
//
// Shared rules across builders: prefix tokens attend only the prefix
// (bidirectionally), EOS attends everything before it plus itself, and no
// other token attends EOS.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bdp/block_layout.hpp"
#include "bdp/corruption.hpp"

namespace bdp {

// Entry (q, k) true means query position q may attend key position k.
// Rectangular shapes cover decode passes where queries are a block slice
// against a longer committed key range.
struct AttnMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> bits;

    AttnMask() = default;
    AttnMask(int rows_, int cols_, bool value = false)
        : rows(rows_), cols(cols_), bits(size_t(rows_) * size_t(cols_), value ? 1 : 0) {}

    uint8_t &at(int q, int k) { return bits[size_t(q) * cols + k]; }
    uint8_t at(int q, int k) const { return bits[size_t(q) * cols + k]; }

    static AttnMask all_true(int rows, int cols) { return AttnMask(rows, cols, true); }

    bool operator==(const AttnMask &other) const {
        return rows == other.rows && cols == other.cols && bits == other.bits;
    }

    // One row per line, '1' where attention is permitted, '0' elsewhere.
    std::string to_text_grid() const;
};

// Noisy history: action block b sees the prefix and every action block up
// through b (bidirectional inside each). Requires a layout without a clean
// suffix.
AttnMask diffusion_forcing_mask(const BlockLayout &layout);

// Clean history via the duplicated suffix: noisy block b sees the prefix,
// clean blocks strictly before b, and itself; clean block b' sees the prefix
// and clean blocks up through b'. Returns the duplicated position ids along
// with the mask. Requires a layout with a clean suffix.
struct TeacherForcingMask {
    AttnMask mask;
    std::vector<int> position_ids;
};
TeacherForcingMask teacher_forcing_mask(const BlockLayout &layout);

// Single-block baseline: every action token sees the prefix and the whole
// action region. Equals diffusion_forcing_mask with one block spanning the
// action region.
AttnMask full_bidirectional_mask(const BlockLayout &layout);

// Strict causal: k <= q.
AttnMask ar_causal_mask(int n);

// Consecutive ids 0..N-1 for layouts without a clean suffix.
std::vector<int> plain_position_ids(const BlockLayout &layout);

inline constexpr int kIgnoreTarget = -100;

struct LossTargets {
    std::vector<int> targets;   // clean id to predict, or kIgnoreTarget
    std::vector<double> weights;
    bool shifted = false;
};

// Unshifted: position i predicts its own clean id wherever the corruption
// masked it. Shifted: position i predicts the clean id at i+1 wherever i+1
// was masked, so the last prefix position predicts the first action token.
// Everything else (prefix, EOS, clean suffix, unmasked) is IGNORE.
LossTargets loss_targets(const std::vector<int> &clean_ids, const BlockLayout &layout,
                         const CorruptionRecord &record, bool shift);

}  // namespace bdp
