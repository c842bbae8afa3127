// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared description of how a token sequence splits into a context prefix,
// equal-width action blocks, an optional EOS slot, and an optional clean
// duplicate of the action region appended for teacher-forcing training.

#pragma once

#include <stdexcept>

namespace bdp {

struct BlockLayout {
    int prefix_len = 0;   // BOS + visual + proprio + language tokens
    int block_count = 0;  // B
    int block_len = 0;    // L', tokens per block
    bool has_eos = false;
    bool has_clean_suffix = false;

    int action_len() const { return block_count * block_len; }
    int action_begin() const { return prefix_len; }
    int action_end() const { return prefix_len + action_len(); }
    int eos_pos() const { return action_end(); }  // valid only when has_eos

    int clean_begin() const { return action_end() + (has_eos ? 1 : 0); }

    int total_len() const {
        return action_end() + (has_eos ? 1 : 0) + (has_clean_suffix ? action_len() : 0);
    }

    // Block index of an action-region position, or -1 outside the noisy
    // action region (prefix, EOS, clean suffix).
    int block_of(int pos) const {
        if (pos < action_begin() || pos >= action_end()) return -1;
        return (pos - action_begin()) / block_len;
    }

    // Block index within the clean suffix, or -1 elsewhere.
    int clean_block_of(int pos) const {
        if (!has_clean_suffix) return -1;
        if (pos < clean_begin() || pos >= clean_begin() + action_len()) return -1;
        return (pos - clean_begin()) / block_len;
    }

    bool in_prefix(int pos) const { return pos >= 0 && pos < prefix_len; }
    bool is_eos(int pos) const { return has_eos && pos == eos_pos(); }

    void validate() const {
        if (prefix_len < 1) throw std::invalid_argument("block layout: prefix must be nonempty");
        if (block_count < 1 || block_len < 1)
            throw std::invalid_argument("block layout: need at least one block of positive width");
        if (has_clean_suffix && !has_eos)
            throw std::invalid_argument("block layout: clean suffix requires the EOS slot");
    }

    static BlockLayout plain(int prefix_len, int block_count, int block_len) {
        BlockLayout l{prefix_len, block_count, block_len, true, false};
        l.validate();
        return l;
    }

    static BlockLayout teacher(int prefix_len, int block_count, int block_len) {
        BlockLayout l{prefix_len, block_count, block_len, true, true};
        l.validate();
        return l;
    }

    // Decode-time layout: blocks are generated one at a time and EOS is never
    // fed back in, so the sequence is prefix plus the blocks emitted so far.
    static BlockLayout inference(int prefix_len, int block_count, int block_len) {
        BlockLayout l{prefix_len, block_count, block_len, false, false};
        l.validate();
        return l;
    }
};

}  // namespace bdp
