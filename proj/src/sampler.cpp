// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bdp/attention_masks.hpp"
#include "bdp/block_layout.hpp"

namespace bdp {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Pick {
    int id = 0;
    double conf = 0.0;
};

// Greedy: the argmax and its softmax probability (first index wins ties).
// Sampled: a categorical draw from the temperature-scaled softmax, with the
// drawn token's scaled probability as the confidence.
Pick pick_from_logits(const std::vector<double> &logits, bool greedy, double temperature,
                      Rng &rng) {
    const double scale = greedy ? 1.0 : 1.0 / temperature;
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    double total = 0.0;
    std::vector<double> p(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - max_logit) * scale);
        total += p[i];
    }
    Pick pick;
    if (greedy) {
        size_t best = 0;
        for (size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[best]) best = i;
        }
        pick.id = int(best);
        pick.conf = p[best] / total;
        return pick;
    }
    const double u = rng.uniform() * total;
    double cum = 0.0;
    size_t chosen = logits.size() - 1;  // guards against rounding at the top end
    for (size_t i = 0; i < logits.size(); ++i) {
        cum += p[i];
        if (u < cum) {
            chosen = i;
            break;
        }
    }
    pick.id = int(chosen);
    pick.conf = p[chosen] / total;
    return pick;
}

template <typename S>
std::vector<double> row_as_double(const MatT<S> &m, int row) {
    std::vector<double> out(size_t(m.cols()));
    for (int j = 0; j < m.cols(); ++j) out[size_t(j)] = double(m(row, j));
    return out;
}

template <typename S>
Mat logits_as_double(const MatT<S> &m) {
    return m.template cast<double>();
}

std::vector<int> iota_ids(int begin, int count) {
    std::vector<int> out(static_cast<size_t>(count));
    std::iota(out.begin(), out.end(), begin);
    return out;
}

// Offsets of the still-uncommitted positions, ascending.
std::vector<int> open_offsets(const std::vector<uint8_t> &committed) {
    std::vector<int> out;
    for (size_t i = 0; i < committed.size(); ++i) {
        if (!committed[i]) out.push_back(int(i));
    }
    return out;
}

// Indices of the `count` highest-confidence picks; exact confidence ties go
// to the lowest offset.
std::vector<int> select_commits(const std::vector<int> &offsets, const std::vector<Pick> &picks,
                                int count) {
    std::vector<int> order(offsets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (picks[size_t(a)].conf != picks[size_t(b)].conf)
            return picks[size_t(a)].conf > picks[size_t(b)].conf;
        return offsets[size_t(a)] < offsets[size_t(b)];
    });
    order.resize(size_t(count));
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return offsets[size_t(a)] < offsets[size_t(b)]; });
    return order;
}

void check_prefix(const std::vector<int> &prefix_ids) {
    if (prefix_ids.empty()) throw std::invalid_argument("decode: empty prefix");
}

}  // namespace

void DecodeConfig::validate() const {
    if (block_count < 1) throw std::invalid_argument("DecodeConfig: block_count must be >= 1");
    if (block_len < 1) throw std::invalid_argument("DecodeConfig: block_len must be >= 1");
    if (steps < 1) throw std::invalid_argument("DecodeConfig: steps must be >= 1");
    if (kind == DecoderKind::block_diffusion && steps > block_len)
        throw std::invalid_argument("DecodeConfig: steps must be <= block_len");
    if (kind == DecoderKind::full_diffusion && steps > block_count * block_len)
        throw std::invalid_argument("DecodeConfig: steps must be <= block_count*block_len");
    if (kind == DecoderKind::autoregressive && !token_shift)
        throw std::invalid_argument("DecodeConfig: autoregressive decoding requires token_shift");
    if (!greedy && !(temperature > 0.0))
        throw std::invalid_argument("DecodeConfig: temperature must be positive");
    if (mask_id < 0) throw std::invalid_argument("DecodeConfig: mask_id must be >= 0");
}

int commit_schedule(int remaining, int steps_remaining) {
    if (remaining < 1) throw std::invalid_argument("commit_schedule: remaining must be >= 1");
    if (steps_remaining < 1)
        throw std::invalid_argument("commit_schedule: steps_remaining must be >= 1");
    return (remaining + steps_remaining - 1) / steps_remaining;
}

template <typename S>
std::vector<int> decode_block_diffusion(const ParamsT<S> &params,
                                        const std::vector<int> &prefix_ids,
                                        const DecodeConfig &config, Rng &rng, DecodeTrace *trace) {
    config.validate();
    check_prefix(prefix_ids);
    const auto start = Clock::now();
    const int c = int(prefix_ids.size());
    const int B = config.block_count;
    const int L = config.block_len;
    const int s = config.steps;
    const std::vector<int> no_rows;

    DecodeTrace local;
    DecodeTrace &tr = trace ? *trace : local;
    tr = DecodeTrace{};

    KvCacheT<S> cache = make_cache<S>(params.config);
    forward(params, prefix_ids, iota_ids(0, c), AttnMask::all_true(c, c), &cache, true, &no_rows);
    tr.nfe += 1;
    tr.token_passes += c;

    std::vector<int> out;
    out.reserve(size_t(B) * size_t(L));
    int carry_id = prefix_ids.back();
    int carry_pos = c - 1;

    for (int b = 0; b < B; ++b) {
        const int base = c + b * L;
        std::vector<int> block_ids(size_t(L), config.mask_id);
        std::vector<uint8_t> committed(size_t(L), 0);
        const std::vector<int> block_pos = iota_ids(base, L);

        for (int pass = 0; pass < s; ++pass) {
            const std::vector<int> open = open_offsets(committed);
            if (open.empty()) throw std::logic_error("decode: masked set emptied early");

            std::vector<int> query_ids;
            std::vector<int> query_pos;
            AttnMask mask;
            if (config.token_shift) {
                // Row j predicts block offset j, so prepend the previously
                // committed token; its keys are already cached, so its own
                // in-pass column stays off for every row.
                query_ids.reserve(size_t(L) + 1);
                query_ids.push_back(carry_id);
                query_ids.insert(query_ids.end(), block_ids.begin(), block_ids.end());
                query_pos.reserve(size_t(L) + 1);
                query_pos.push_back(carry_pos);
                query_pos.insert(query_pos.end(), block_pos.begin(), block_pos.end());
                mask = AttnMask::all_true(L + 1, cache.len() + L + 1);
                for (int q = 0; q < mask.rows; ++q) mask.at(q, cache.len()) = 0;
                // The carry token's trained receptive field is the committed
                // history only, so it never sees the in-flight block.
                for (int k = cache.len(); k < mask.cols; ++k) mask.at(0, k) = 0;
            } else {
                query_ids = block_ids;
                query_pos = block_pos;
                mask = AttnMask::all_true(L, cache.len() + L);
            }

            MatT<S> logits =
                forward(params, query_ids, query_pos, mask, &cache, false, &open);
            tr.nfe += 1;
            tr.token_passes += int64_t(query_ids.size());

            const int commit_n = commit_schedule(int(open.size()), s - pass);
            std::vector<Pick> picks(open.size());
            for (size_t i = 0; i < open.size(); ++i) {
                picks[i] = pick_from_logits(row_as_double(logits, open[i]), config.greedy,
                                            config.temperature, rng);
            }
            const std::vector<int> chosen = select_commits(open, picks, commit_n);

            DecodeStep step;
            step.block = b;
            for (int idx : chosen) {
                const int off = open[size_t(idx)];
                block_ids[size_t(off)] = picks[size_t(idx)].id;
                committed[size_t(off)] = 1;
                step.positions.push_back(b * L + off);
                step.ids.push_back(picks[size_t(idx)].id);
                step.confidences.push_back(picks[size_t(idx)].conf);
            }
            step.nfe_after = tr.nfe;
            step.cache_len = cache.len();
            if (config.capture_logits) {
                step.input_ids = query_ids;
                step.logits = logits_as_double(logits);
            }
            tr.steps.push_back(std::move(step));
        }
        if (!open_offsets(committed).empty())
            throw std::logic_error("decode: block not fully committed after its passes");

        // Commit pass: append the finished block's keys and values; no logits.
        forward(params, block_ids, block_pos, AttnMask::all_true(L, cache.len() + L), &cache, true,
                &no_rows);
        tr.nfe += 1;
        tr.token_passes += L;

        carry_id = block_ids.back();
        carry_pos = base + L - 1;
        out.insert(out.end(), block_ids.begin(), block_ids.end());
    }

    tr.tokens = out;
    tr.wall_seconds = elapsed_seconds(start);
    return out;
}

template <typename S>
std::vector<int> decode_full_diffusion(const ParamsT<S> &params,
                                       const std::vector<int> &prefix_ids,
                                       const DecodeConfig &config, Rng &rng, DecodeTrace *trace) {
    config.validate();
    check_prefix(prefix_ids);
    const auto start = Clock::now();
    const int c = int(prefix_ids.size());
    const int total = config.block_count * config.block_len;
    const int S_steps = config.steps;
    const int n = c + total;

    DecodeTrace local;
    DecodeTrace &tr = trace ? *trace : local;
    tr = DecodeTrace{};

    const BlockLayout layout = BlockLayout::inference(c, 1, total);
    const AttnMask mask = full_bidirectional_mask(layout);
    const std::vector<int> pos = iota_ids(0, n);

    std::vector<int> ids = prefix_ids;
    ids.resize(size_t(n), config.mask_id);
    std::vector<uint8_t> committed(size_t(total), 0);

    for (int pass = 0; pass < S_steps; ++pass) {
        const std::vector<int> open = open_offsets(committed);
        if (open.empty()) throw std::logic_error("decode: masked set emptied early");

        // With shift the prediction for offset j sits on the previous row; the
        // prefix supplies that row for offset 0.
        std::vector<int> rows(open.size());
        for (size_t i = 0; i < open.size(); ++i)
            rows[i] = c + open[i] - (config.token_shift ? 1 : 0);

        MatT<S> logits = forward<S>(params, ids, pos, mask, nullptr, false, &rows);
        tr.nfe += 1;
        tr.token_passes += n;

        const int commit_n = commit_schedule(int(open.size()), S_steps - pass);
        std::vector<Pick> picks(open.size());
        for (size_t i = 0; i < open.size(); ++i) {
            picks[i] = pick_from_logits(row_as_double(logits, rows[i]), config.greedy,
                                        config.temperature, rng);
        }
        const std::vector<int> chosen = select_commits(open, picks, commit_n);

        DecodeStep step;
        step.block = -1;
        for (int idx : chosen) {
            const int off = open[size_t(idx)];
            ids[size_t(c + off)] = picks[size_t(idx)].id;
            committed[size_t(off)] = 1;
            step.positions.push_back(off);
            step.ids.push_back(picks[size_t(idx)].id);
            step.confidences.push_back(picks[size_t(idx)].conf);
        }
        step.nfe_after = tr.nfe;
        step.cache_len = 0;
        if (config.capture_logits) {
            step.input_ids.assign(ids.begin() + c, ids.end());
            step.logits = logits_as_double(logits);
        }
        tr.steps.push_back(std::move(step));
    }
    if (!open_offsets(committed).empty())
        throw std::logic_error("decode: sequence not fully committed after its passes");

    tr.tokens.assign(ids.begin() + c, ids.end());
    tr.wall_seconds = elapsed_seconds(start);
    return tr.tokens;
}

template <typename S>
std::vector<int> decode_autoregressive(const ParamsT<S> &params,
                                       const std::vector<int> &prefix_ids,
                                       const DecodeConfig &config, Rng &rng, DecodeTrace *trace) {
    config.validate();
    check_prefix(prefix_ids);
    const auto start = Clock::now();
    const int c = int(prefix_ids.size());
    const int total = config.block_count * config.block_len;

    DecodeTrace local;
    DecodeTrace &tr = trace ? *trace : local;
    tr = DecodeTrace{};

    KvCacheT<S> cache = make_cache<S>(params.config);
    const std::vector<int> last_row{c - 1};
    MatT<S> logits =
        forward(params, prefix_ids, iota_ids(0, c), ar_causal_mask(c), &cache, true, &last_row);
    tr.nfe += 1;
    tr.token_passes += c;
    std::vector<double> next_logits = row_as_double(logits, c - 1);

    std::vector<int> out;
    out.reserve(size_t(total));
    const std::vector<int> row0{0};
    for (int i = 0; i < total; ++i) {
        const Pick pick = pick_from_logits(next_logits, config.greedy, config.temperature, rng);
        out.push_back(pick.id);

        DecodeStep step;
        step.block = -1;
        step.positions = {i};
        step.ids = {pick.id};
        step.confidences = {pick.conf};
        step.nfe_after = tr.nfe;
        step.cache_len = cache.len();
        tr.steps.push_back(std::move(step));

        // Extend the cache with the committed token; its output row predicts
        // the next offset (the final extension's logits go unused).
        const std::vector<int> tok{pick.id};
        const std::vector<int> tok_pos{c + i};
        logits = forward(params, tok, tok_pos, AttnMask::all_true(1, cache.len() + 1), &cache,
                         true, &row0);
        tr.nfe += 1;
        tr.token_passes += 1;
        next_logits = row_as_double(logits, 0);
    }

    tr.tokens = out;
    tr.wall_seconds = elapsed_seconds(start);
    return out;
}

template <typename S>
std::vector<int> decode(const ParamsT<S> &params, const std::vector<int> &prefix_ids,
                        const DecodeConfig &config, Rng &rng, DecodeTrace *trace) {
    switch (config.kind) {
        case DecoderKind::block_diffusion:
            return decode_block_diffusion(params, prefix_ids, config, rng, trace);
        case DecoderKind::full_diffusion:
            return decode_full_diffusion(params, prefix_ids, config, rng, trace);
        case DecoderKind::autoregressive:
            return decode_autoregressive(params, prefix_ids, config, rng, trace);
    }
    throw std::invalid_argument("decode: unknown decoder kind");
}

template std::vector<int> decode_block_diffusion<double>(const ParamsT<double> &,
                                                         const std::vector<int> &,
                                                         const DecodeConfig &, Rng &,
                                                         DecodeTrace *);
template std::vector<int> decode_block_diffusion<float>(const ParamsT<float> &,
                                                        const std::vector<int> &,
                                                        const DecodeConfig &, Rng &,
                                                        DecodeTrace *);
template std::vector<int> decode_full_diffusion<double>(const ParamsT<double> &,
                                                        const std::vector<int> &,
                                                        const DecodeConfig &, Rng &,
                                                        DecodeTrace *);
template std::vector<int> decode_full_diffusion<float>(const ParamsT<float> &,
                                                       const std::vector<int> &,
                                                       const DecodeConfig &, Rng &, DecodeTrace *);
template std::vector<int> decode_autoregressive<double>(const ParamsT<double> &,
                                                        const std::vector<int> &,
                                                        const DecodeConfig &, Rng &,
                                                        DecodeTrace *);
template std::vector<int> decode_autoregressive<float>(const ParamsT<float> &,
                                                       const std::vector<int> &,
                                                       const DecodeConfig &, Rng &, DecodeTrace *);
template std::vector<int> decode<double>(const ParamsT<double> &, const std::vector<int> &,
                                         const DecodeConfig &, Rng &, DecodeTrace *);
template std::vector<int> decode<float>(const ParamsT<float> &, const std::vector<int> &,
                                        const DecodeConfig &, Rng &, DecodeTrace *);

}  // namespace bdp
