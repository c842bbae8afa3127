// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/token_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bdp {

void Vocab::validate() const {
    if (bin_count <= 0) throw std::invalid_argument("vocab: bin_count must be positive");
    const int specials[] = {mask_id, bos_id, eos_id, pad_id, grip_open_id, grip_close_id};
    for (int id : specials) {
        if (id < bin_count || id >= prefix_base)
            throw std::invalid_argument("vocab: special id overlaps bin or prefix range");
    }
    for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j)
            if (specials[i] == specials[j]) throw std::invalid_argument("vocab: duplicate special id");
    if (prefix_base > size) throw std::invalid_argument("vocab: prefix range outside vocabulary");
}

double empirical_quantile(const std::vector<double> &sorted_values, double p) {
    if (sorted_values.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
    const size_t n = sorted_values.size();
    if (n == 1) return sorted_values[0];
    double h = p * static_cast<double>(n - 1);
    size_t lo = static_cast<size_t>(std::floor(h));
    if (lo >= n - 1) return sorted_values[n - 1];
    double frac = h - static_cast<double>(lo);
    return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

std::vector<double> quantile_edges(std::vector<double> values, int bins) {
    if (values.empty()) throw std::invalid_argument("quantile_edges: empty sample");
    if (bins < 1) throw std::invalid_argument("quantile_edges: bins must be >= 1");
    std::sort(values.begin(), values.end());
    const double p_lo = 0.01, p_hi = 0.99;
    const double lo = empirical_quantile(values, p_lo);
    const double hi = empirical_quantile(values, p_hi);
    if (!(lo < hi)) throw std::invalid_argument("quantile_edges: degenerate dimension (constant sample)");

    // Interior edges sample the quantile range [p_lo, p_hi] evenly, so the
    // tail clip never flattens the first or last interior step.
    std::vector<double> edges(static_cast<size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k) {
        const double p = p_lo + (p_hi - p_lo) * static_cast<double>(k) / bins;
        edges[k] = empirical_quantile(values, p);
    }
    edges.front() = lo;
    edges.back() = hi;
    for (int k = 0; k < bins; ++k) {
        if (!(edges[k] < edges[k + 1]))
            throw std::invalid_argument("quantile_edges: degenerate dimension (non-increasing edges)");
    }
    return edges;
}

std::vector<double> uniform_edges(double lo, double hi, int bins) {
    if (!(lo < hi)) throw std::invalid_argument("uniform_edges: lo must be < hi");
    if (bins < 1) throw std::invalid_argument("uniform_edges: bins must be >= 1");
    std::vector<double> edges(static_cast<size_t>(bins) + 1);
    for (int k = 0; k <= bins; ++k)
        edges[k] = lo + (hi - lo) * static_cast<double>(k) / bins;
    edges.front() = lo;
    edges.back() = hi;
    return edges;
}

void BinTable::validate() const {
    if (dims <= 0) throw std::invalid_argument("bins: dims must be positive");
    if (static_cast<int>(edges.size()) != dims) throw std::invalid_argument("bins: edge list count != dims");
    for (int d = 0; d < dims; ++d) {
        if (edges[d].empty()) continue;
        if (static_cast<int>(edges[d].size()) != bin_count + 1)
            throw std::invalid_argument("bins: edge count must be bin_count + 1");
        for (int k = 0; k < bin_count; ++k)
            if (!(edges[d][k] < edges[d][k + 1]))
                throw std::invalid_argument("bins: edges must be strictly increasing");
    }
}

void BinTable::save(std::ostream &os) const {
    os << "bdp-bins " << dims << " " << bin_count << "\n";
    char buf[64];
    for (int d = 0; d < dims; ++d) {
        if (edges[d].empty()) {
            os << "categorical\n";
            continue;
        }
        for (size_t k = 0; k < edges[d].size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", edges[d][k]);
            os << (k ? " " : "") << buf;
        }
        os << "\n";
    }
}

BinTable BinTable::load(std::istream &is) {
    std::string magic;
    BinTable t;
    if (!(is >> magic) || magic != "bdp-bins") throw std::runtime_error("bins: bad header");
    if (!(is >> t.dims >> t.bin_count)) throw std::runtime_error("bins: bad header");
    std::string line;
    std::getline(is, line);  // rest of header line
    t.edges.resize(t.dims);
    for (int d = 0; d < t.dims; ++d) {
        if (!std::getline(is, line)) throw std::runtime_error("bins: truncated table");
        if (line == "categorical") continue;
        std::istringstream ls(line);
        double v;
        while (ls >> v) t.edges[d].push_back(v);
    }
    t.validate();
    return t;
}

void BinTable::save_file(const std::string &path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("bins: cannot open " + path);
    save(os);
}

BinTable BinTable::load_file(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("bins: cannot open " + path);
    return load(is);
}

BinTable fit_bins(const std::vector<ActionChunk> &samples) {
    if (samples.empty()) throw std::invalid_argument("fit_bins: empty sample set");
    const int dims = samples.front().dims;
    if (dims < 1) throw std::invalid_argument("fit_bins: chunks must have at least one dimension");
    for (const auto &c : samples)
        if (c.dims != dims) throw std::invalid_argument("fit_bins: inconsistent chunk dimensions");

    BinTable table;
    table.dims = dims;
    table.edges.resize(dims);
    for (int d = 0; d < dims - 1; ++d) {
        std::vector<double> values;
        for (const auto &c : samples)
            for (int h = 0; h < c.horizon; ++h) values.push_back(c.at(h, d));
        try {
            table.edges[d] = quantile_edges(std::move(values), table.bin_count);
        } catch (const std::invalid_argument &e) {
            throw std::invalid_argument("fit_bins: dimension " + std::to_string(d) + ": " + e.what());
        }
    }
    // last dimension is the binary gripper: categorical, no bins
    for (const auto &c : samples)
        for (int h = 0; h < c.horizon; ++h) {
            double g = c.at(h, dims - 1);
            if (g != 0.0 && g != 1.0) throw std::invalid_argument("fit_bins: gripper values must be 0 or 1");
        }
    table.validate();
    return table;
}

namespace {

int bin_index(double v, const std::vector<double> &edges) {
    // half-open intervals [e_k, e_{k+1}); the last interval is closed;
    // values outside the clip range go to the extreme bins
    const int bins = static_cast<int>(edges.size()) - 1;
    if (v <= edges.front()) return 0;
    if (v >= edges.back()) return bins - 1;
    int idx = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
    return std::clamp(idx, 0, bins - 1);
}

}  // namespace

std::vector<int> encode_chunk(const ActionChunk &chunk, const BinTable &bins, const Vocab &vocab) {
    if (chunk.dims != bins.dims) throw std::invalid_argument("encode_chunk: dimension mismatch with bins");
    if (chunk.horizon < 1) throw std::invalid_argument("encode_chunk: horizon must be >= 1");
    std::vector<int> out;
    out.reserve(chunk.values.size());
    for (int h = 0; h < chunk.horizon; ++h) {
        for (int d = 0; d < chunk.dims; ++d) {
            double v = chunk.at(h, d);
            if (std::isnan(v)) throw std::invalid_argument("encode_chunk: NaN action value");
            if (bins.categorical(d)) {
                if (v == 0.0)
                    out.push_back(vocab.grip_open_id);
                else if (v == 1.0)
                    out.push_back(vocab.grip_close_id);
                else
                    throw std::invalid_argument("encode_chunk: gripper value must be 0 or 1");
            } else {
                out.push_back(bin_index(v, bins.edges[d]));
            }
        }
    }
    return out;
}

ActionChunk decode_tokens(const std::vector<int> &tokens, const BinTable &bins, const Vocab &vocab) {
    if (tokens.empty() || tokens.size() % static_cast<size_t>(bins.dims) != 0)
        throw std::invalid_argument("decode_tokens: token count not divisible by dims");
    const int horizon = static_cast<int>(tokens.size()) / bins.dims;
    ActionChunk chunk(horizon, bins.dims);
    for (int h = 0; h < horizon; ++h) {
        for (int d = 0; d < bins.dims; ++d) {
            int id = tokens[static_cast<size_t>(h) * bins.dims + d];
            if (bins.categorical(d)) {
                if (id == vocab.grip_open_id)
                    chunk.at(h, d) = 0.0;
                else if (id == vocab.grip_close_id)
                    chunk.at(h, d) = 1.0;
                else
                    throw std::runtime_error("decode_tokens: non-gripper id in gripper slot");
            } else {
                if (!vocab.is_bin(id))
                    throw std::runtime_error("decode_tokens: id " + std::to_string(id) +
                                             " is not a bin token (incompletely denoised sequence?)");
                chunk.at(h, d) = 0.5 * (bins.edges[d][id] + bins.edges[d][id + 1]);
            }
        }
    }
    return chunk;
}

TokenSeq assemble_sequence(const PrefixTokens &prefix, const std::vector<int> &action_tokens,
                           LayoutVariant variant, const Vocab &vocab) {
    if (prefix.ids.empty() || prefix.ids.front() != vocab.bos_id)
        throw std::invalid_argument("assemble_sequence: prefix must begin with BOS");
    if (1 + prefix.visual_len + prefix.proprio_len + prefix.language_len != prefix.size())
        throw std::invalid_argument("assemble_sequence: prefix sub-region lengths do not add up");
    if (action_tokens.empty()) throw std::invalid_argument("assemble_sequence: empty action region");

    const int c = prefix.size();
    const int a = static_cast<int>(action_tokens.size());

    TokenSeq seq;
    seq.ids = prefix.ids;
    seq.ids.insert(seq.ids.end(), action_tokens.begin(), action_tokens.end());
    seq.ids.push_back(vocab.eos_id);
    if (variant == LayoutVariant::teacher_forcing)
        seq.ids.insert(seq.ids.end(), action_tokens.begin(), action_tokens.end());

    RegionMap &r = seq.regions;
    r.bos = {0, 1};
    r.visual = {1, 1 + prefix.visual_len};
    r.proprio = {r.visual.end, r.visual.end + prefix.proprio_len};
    r.language = {r.proprio.end, r.proprio.end + prefix.language_len};
    r.action = {c, c + a};
    r.eos = {c + a, c + a + 1};
    if (variant == LayoutVariant::teacher_forcing) r.clean = Region{c + a + 1, c + 2 * a + 1};
    return seq;
}

}  // namespace bdp
