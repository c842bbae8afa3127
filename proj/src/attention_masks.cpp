// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/attention_masks.hpp"

#include <stdexcept>

namespace bdp {

std::string AttnMask::to_text_grid() const {
    std::string out;
    out.reserve(size_t(rows) * (cols + 1));
    for (int q = 0; q < rows; ++q) {
        for (int k = 0; k < cols; ++k) out.push_back(at(q, k) ? '1' : '0');
        out.push_back('\n');
    }
    return out;
}

AttnMask diffusion_forcing_mask(const BlockLayout &layout) {
    layout.validate();
    if (layout.has_clean_suffix)
        throw std::invalid_argument("diffusion_forcing_mask: layout must not carry a clean suffix");
    const int n = layout.total_len();
    AttnMask m(n, n);
    for (int q = 0; q < n; ++q) {
        for (int k = 0; k < n; ++k) {
            bool allow = false;
            if (layout.is_eos(q)) {
                allow = k <= q;  // everything prior plus itself
            } else if (layout.is_eos(k)) {
                allow = false;
            } else if (layout.in_prefix(q)) {
                allow = layout.in_prefix(k);
            } else {
                allow = layout.in_prefix(k) || layout.block_of(k) <= layout.block_of(q);
            }
            m.at(q, k) = allow;
        }
    }
    return m;
}

TeacherForcingMask teacher_forcing_mask(const BlockLayout &layout) {
    layout.validate();
    if (!layout.has_clean_suffix)
        throw std::invalid_argument("teacher_forcing_mask: layout must carry a clean suffix");
    const int n = layout.total_len();
    AttnMask m(n, n);
    for (int q = 0; q < n; ++q) {
        for (int k = 0; k < n; ++k) {
            bool allow = false;
            if (layout.is_eos(q)) {
                allow = k <= q;  // prefix and all noisy blocks; the suffix comes later
            } else if (layout.is_eos(k)) {
                allow = false;
            } else if (layout.in_prefix(q)) {
                allow = layout.in_prefix(k);
            } else if (layout.block_of(q) >= 0) {
                // noisy block: clean history strictly before it, plus itself
                int b = layout.block_of(q);
                allow = layout.in_prefix(k) ||
                        (layout.clean_block_of(k) >= 0 && layout.clean_block_of(k) < b) ||
                        layout.block_of(k) == b;
            } else {
                // clean suffix: block-causal over prefix and clean blocks
                int b = layout.clean_block_of(q);
                allow = layout.in_prefix(k) ||
                        (layout.clean_block_of(k) >= 0 && layout.clean_block_of(k) <= b);
            }
            m.at(q, k) = allow;
        }
    }

    std::vector<int> pos(n);
    for (int i = 0; i < layout.clean_begin(); ++i) pos[i] = i;
    for (int i = layout.clean_begin(); i < n; ++i)
        pos[i] = layout.action_begin() + (i - layout.clean_begin());
    return {std::move(m), std::move(pos)};
}

AttnMask full_bidirectional_mask(const BlockLayout &layout) {
    layout.validate();
    if (layout.has_clean_suffix)
        throw std::invalid_argument("full_bidirectional_mask: layout must not carry a clean suffix");
    const int n = layout.total_len();
    AttnMask m(n, n);
    for (int q = 0; q < n; ++q) {
        for (int k = 0; k < n; ++k) {
            bool allow = false;
            if (layout.is_eos(q)) {
                allow = k <= q;
            } else if (layout.is_eos(k)) {
                allow = false;
            } else if (layout.in_prefix(q)) {
                allow = layout.in_prefix(k);
            } else {
                allow = true;  // whole action region plus prefix
            }
            m.at(q, k) = allow;
        }
    }
    return m;
}

AttnMask ar_causal_mask(int n) {
    if (n < 1) throw std::invalid_argument("ar_causal_mask: n must be positive");
    AttnMask m(n, n);
    for (int q = 0; q < n; ++q)
        for (int k = 0; k <= q; ++k) m.at(q, k) = 1;
    return m;
}

std::vector<int> plain_position_ids(const BlockLayout &layout) {
    if (layout.has_clean_suffix)
        throw std::invalid_argument("plain_position_ids: clean-suffix layouts duplicate ids");
    std::vector<int> pos(layout.total_len());
    for (int i = 0; i < int(pos.size()); ++i) pos[i] = i;
    return pos;
}

LossTargets loss_targets(const std::vector<int> &clean_ids, const BlockLayout &layout,
                         const CorruptionRecord &record, bool shift) {
    const int n = layout.total_len();
    if (int(clean_ids.size()) != n || int(record.masked.size()) != n)
        throw std::invalid_argument("loss_targets: sequence/record length mismatch");

    LossTargets out;
    out.shifted = shift;
    out.targets.assign(n, kIgnoreTarget);
    out.weights.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        int predicted = shift ? i + 1 : i;  // row i carries the loss for this position
        if (predicted >= n || !record.masked[predicted]) continue;
        out.targets[i] = clean_ids[predicted];
        out.weights[i] = record.loss_weights[predicted];
    }
    return out;
}

}  // namespace bdp
