// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Action tokenization: quantile binning of continuous action chunks, the
// discrete vocabulary, and assembly of full multimodal token layouts.

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bdp {

// Discrete vocabulary. Bin ids occupy [0, bin_count); special ids follow;
// [prefix_base, size) is reserved for synthetic instruction/proprio tokens.
struct Vocab {
    int bin_count = 256;
    int mask_id = 256;
    int bos_id = 257;
    int eos_id = 258;
    int pad_id = 259;
    int grip_open_id = 260;
    int grip_close_id = 261;
    int prefix_base = 262;
    int size = 300;

    bool is_bin(int id) const { return id >= 0 && id < bin_count; }
    bool is_gripper(int id) const { return id == grip_open_id || id == grip_close_id; }
    bool is_action_value(int id) const { return is_bin(id) || is_gripper(id); }
    bool is_prefix(int id) const { return id >= prefix_base && id < size; }

    void validate() const;
};

// H timesteps of D-dimensional continuous actions, row-major.
// The last dimension is the binary gripper command.
struct ActionChunk {
    int horizon = 0;
    int dims = 0;
    std::vector<double> values;  // horizon * dims

    ActionChunk() = default;
    ActionChunk(int h, int d) : horizon(h), dims(d), values(static_cast<size_t>(h) * d, 0.0) {}

    double &at(int h, int d) { return values[static_cast<size_t>(h) * dims + d]; }
    double at(int h, int d) const { return values[static_cast<size_t>(h) * dims + d]; }
};

// Per-dimension quantile bin edges. A dimension with no edge list is
// categorical (the gripper) and is encoded with dedicated vocabulary ids.
struct BinTable {
    int dims = 0;
    int bin_count = 256;
    std::vector<std::vector<double>> edges;  // size dims; bin_count+1 entries or empty

    bool categorical(int d) const { return edges[d].empty(); }
    double clip_lo(int d) const { return edges[d].front(); }
    double clip_hi(int d) const { return edges[d].back(); }

    void validate() const;

    // Text table: header "bdp-bins <dims> <bin_count>", then one line per
    // dimension ("categorical" or whitespace-separated edges, 17 significant
    // digits so files round-trip bit-exactly and stay diffable).
    void save(std::ostream &os) const;
    static BinTable load(std::istream &is);
    void save_file(const std::string &path) const;
    static BinTable load_file(const std::string &path);
};

// Empirical quantile with linear interpolation between order statistics
// (the convention numpy calls "linear"). `sorted_values` must be ascending.
double empirical_quantile(const std::vector<double> &sorted_values, double p);

// 257 edges for `bins` bins: clip the sample to its [1st, 99th] percentile
// range, then take quantiles of the clipped sample at equal probability
// steps. Throws if the result is not strictly increasing.
std::vector<double> quantile_edges(std::vector<double> values, int bins);

// Evenly spaced edges over [lo, hi]; plumbing for dimensions that carry no
// usable sample distribution.
std::vector<double> uniform_edges(double lo, double hi, int bins);

// Quantile-fit every continuous dimension; the final (gripper) dimension is
// flagged categorical. Throws on an empty sample set or a degenerate
// (constant) continuous dimension.
BinTable fit_bins(const std::vector<ActionChunk> &samples);

std::vector<int> encode_chunk(const ActionChunk &chunk, const BinTable &bins, const Vocab &vocab);
ActionChunk decode_tokens(const std::vector<int> &tokens, const BinTable &bins, const Vocab &vocab);

struct Region {
    int begin = 0;
    int end = 0;
    int len() const { return end - begin; }
    bool contains(int i) const { return i >= begin && i < end; }
};

struct RegionMap {
    Region bos;
    Region visual;
    Region proprio;
    Region language;
    Region action;
    Region eos;
    std::optional<Region> clean;  // Teacher-Forcing suffix

    Region prefix() const { return {bos.begin, language.end}; }
};

struct TokenSeq {
    std::vector<int> ids;
    RegionMap regions;

    int size() const { return static_cast<int>(ids.size()); }
};

// Multimodal prefix [BOS, v, p, l] plus the split between its sub-regions.
struct PrefixTokens {
    std::vector<int> ids;
    int visual_len = 0;
    int proprio_len = 0;
    int language_len = 0;

    int size() const { return static_cast<int>(ids.size()); }
};

enum class LayoutVariant { plain, teacher_forcing };

// plain:            [c, a, EOS]
// teacher_forcing:  [c, a, EOS, a]   (second copy annotated as the clean suffix)
TokenSeq assemble_sequence(const PrefixTokens &prefix, const std::vector<int> &action_tokens,
                           LayoutVariant variant, const Vocab &vocab);

}  // namespace bdp
