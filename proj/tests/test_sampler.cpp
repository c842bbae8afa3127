// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bdp/attention_masks.hpp"
#include "bdp/block_layout.hpp"
#include "bdp/net.hpp"
#include "bdp/rng.hpp"
#include "doctest.h"

using namespace bdp;

namespace {

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.vocab_size = 40;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.ffn = 32;
    cfg.init_scale = 0.05;
    return cfg;
}

Params tiny_model(uint64_t seed = 3) {
    Rng rng(seed);
    return init_params(tiny_model_config(), rng);
}

DecodeConfig base_config(DecoderKind kind, int blocks, int block_len, int steps) {
    DecodeConfig cfg;
    cfg.kind = kind;
    cfg.block_count = blocks;
    cfg.block_len = block_len;
    cfg.steps = steps;
    cfg.mask_id = 39;
    return cfg;
}

std::vector<int> tiny_prefix() { return {30, 31, 32, 33}; }

// Independent reference: the same confidence-ranked commit process, but every
// pass runs the full sequence through the training-time attention mask with
// no cache. Greedy only.
std::vector<int> oracle_block_decode(const Params &params, const std::vector<int> &prefix,
                                     const DecodeConfig &cfg,
                                     std::vector<std::vector<int>> *per_pass_positions = nullptr) {
    const int c = int(prefix.size());
    const int L = cfg.block_len;
    std::vector<int> ids = prefix;
    for (int b = 0; b < cfg.block_count; ++b) {
        const int base = c + b * L;
        ids.resize(size_t(base + L), cfg.mask_id);
        const BlockLayout layout = BlockLayout::inference(c, b + 1, L);
        const AttnMask mask = diffusion_forcing_mask(layout);
        std::vector<int> pos(ids.size());
        std::iota(pos.begin(), pos.end(), 0);
        std::vector<uint8_t> committed(size_t(L), 0);
        for (int pass = 0; pass < cfg.steps; ++pass) {
            std::vector<int> open;
            for (int j = 0; j < L; ++j)
                if (!committed[size_t(j)]) open.push_back(j);
            const Mat logits = forward(params, ids, pos, mask);
            struct Cand {
                int off;
                int id;
                double conf;
            };
            std::vector<Cand> cands;
            for (int off : open) {
                const int row = base + off - (cfg.token_shift ? 1 : 0);
                int best = 0;
                for (int v = 1; v < logits.cols(); ++v)
                    if (logits(row, v) > logits(row, best)) best = v;
                double mx = logits.row(row).maxCoeff();
                double total = 0.0;
                for (int v = 0; v < logits.cols(); ++v) total += std::exp(logits(row, v) - mx);
                cands.push_back({off, best, std::exp(logits(row, best) - mx) / total});
            }
            std::sort(cands.begin(), cands.end(), [](const Cand &a, const Cand &b) {
                if (a.conf != b.conf) return a.conf > b.conf;
                return a.off < b.off;
            });
            const int n = commit_schedule(int(open.size()), cfg.steps - pass);
            std::vector<int> committed_now;
            for (int i = 0; i < n; ++i) {
                ids[size_t(base + cands[size_t(i)].off)] = cands[size_t(i)].id;
                committed[size_t(cands[size_t(i)].off)] = 1;
                committed_now.push_back(b * L + cands[size_t(i)].off);
            }
            std::sort(committed_now.begin(), committed_now.end());
            if (per_pass_positions) per_pass_positions->push_back(committed_now);
        }
    }
    return std::vector<int>(ids.begin() + c, ids.end());
}

std::vector<int> oracle_ar_decode(const Params &params, const std::vector<int> &prefix,
                                  const DecodeConfig &cfg) {
    const int c = int(prefix.size());
    const int total = cfg.block_count * cfg.block_len;
    std::vector<int> ids = prefix;
    for (int i = 0; i < total; ++i) {
        const int n = int(ids.size());
        std::vector<int> pos(ids.size());
        std::iota(pos.begin(), pos.end(), 0);
        const Mat logits = forward(params, ids, pos, ar_causal_mask(n));
        int best = 0;
        for (int v = 1; v < logits.cols(); ++v)
            if (logits(n - 1, v) > logits(n - 1, best)) best = v;
        ids.push_back(best);
    }
    return std::vector<int>(ids.begin() + c, ids.end());
}

// Zero-layer logits depend only on the row's own id: head(norm(embed(id))).
// Computed directly from the parameter tensors.
int zero_layer_argmax(const Params &params, int id) {
    Eigen::RowVectorXd x = params.embed.row(id);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    Eigen::RowVectorXd xn = (x.array() - mean) / std::sqrt(var + 1e-5);
    Eigen::RowVectorXd scaled =
        xn.array() * params.lnf_g.col(0).transpose().array() +
        params.lnf_b.col(0).transpose().array();
    Eigen::RowVectorXd logits = scaled * params.head;
    int best = 0;
    for (int v = 1; v < logits.size(); ++v)
        if (logits(v) > logits(best)) best = v;
    return best;
}

Params zero_layer_model(int vocab, uint64_t seed = 11) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.layers = 0;
    cfg.ffn = 16;
    cfg.init_scale = 0.3;
    Rng rng(seed);
    return init_params(cfg, rng);
}

}  // namespace

TEST_SUITE("sampler") {
    TEST_CASE("commit schedule is ceil division") {
        CHECK(commit_schedule(14, 2) == 7);
        CHECK(commit_schedule(14, 12) == 2);
        CHECK(commit_schedule(3, 5) == 1);
        CHECK(commit_schedule(7, 2) == 4);
        CHECK(commit_schedule(1, 1) == 1);
        CHECK(commit_schedule(7, 7) == 1);
        CHECK_THROWS_AS(commit_schedule(0, 3), std::invalid_argument);
        CHECK_THROWS_AS(commit_schedule(3, 0), std::invalid_argument);
    }

    TEST_CASE("schedule trace: 14 positions over 12 passes") {
        int remaining = 14;
        std::vector<int> counts;
        for (int pass = 0; pass < 12; ++pass) {
            const int n = commit_schedule(remaining, 12 - pass);
            counts.push_back(n);
            remaining -= n;
        }
        CHECK(remaining == 0);
        CHECK(counts == std::vector<int>{2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    }

    TEST_CASE("schedule trace: one block of 7 over 2 passes") {
        CHECK(commit_schedule(7, 2) == 4);
        CHECK(commit_schedule(3, 1) == 3);
    }

    TEST_CASE("config validation") {
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, 5);
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);  // steps > block_len
        cfg.steps = 4;
        CHECK_NOTHROW(cfg.validate());

        DecodeConfig full = base_config(DecoderKind::full_diffusion, 2, 4, 9);
        CHECK_THROWS_AS(full.validate(), std::invalid_argument);  // steps > total
        full.steps = 8;
        CHECK_NOTHROW(full.validate());

        DecodeConfig ar = base_config(DecoderKind::autoregressive, 2, 4, 1);
        CHECK_THROWS_AS(ar.validate(), std::invalid_argument);  // needs token_shift
        ar.token_shift = true;
        CHECK_NOTHROW(ar.validate());

        DecodeConfig sampled = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        sampled.greedy = false;
        sampled.temperature = 0.0;
        CHECK_THROWS_AS(sampled.validate(), std::invalid_argument);

        const Params params = tiny_model();
        Rng rng(1);
        DecodeConfig ok = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        CHECK_THROWS_AS(decode_block_diffusion(params, {}, ok, rng), std::invalid_argument);
    }

    TEST_CASE("function evaluation and token-pass accounting") {
        // Reference decode shape: 16-token prefix, 2 blocks of 7, 2 passes.
        const Params params = zero_layer_model(300);
        std::vector<int> prefix(16);
        std::iota(prefix.begin(), prefix.end(), 262);
        Rng rng(5);

        DecodeConfig block = base_config(DecoderKind::block_diffusion, 2, 7, 2);
        block.mask_id = 256;
        DecodeTrace bt;
        decode_block_diffusion(params, prefix, block, rng, &bt);
        CHECK(bt.nfe == 1 + 2 * (2 + 1));  // prefill + per block (s refinements + commit)
        CHECK(bt.nfe == 7);
        CHECK(bt.token_passes == 16 + 2 * 3 * 7);
        CHECK(bt.token_passes == 58);

        DecodeConfig full = base_config(DecoderKind::full_diffusion, 2, 7, 12);
        full.mask_id = 256;
        DecodeTrace ft;
        decode_full_diffusion(params, prefix, full, rng, &ft);
        CHECK(ft.nfe == 12);
        CHECK(ft.token_passes == 12 * (16 + 14));
        CHECK(ft.token_passes == 360);

        DecodeConfig ar = base_config(DecoderKind::autoregressive, 2, 7, 1);
        ar.mask_id = 256;
        ar.token_shift = true;
        DecodeTrace at;
        decode_autoregressive(params, prefix, ar, rng, &at);
        CHECK(at.nfe == 1 + 14);
        CHECK(at.token_passes == 16 + 14);

        // The study ratio: whole-sequence token passes over block-wise ones.
        CHECK(double(ft.token_passes) / double(bt.token_passes) == doctest::Approx(360.0 / 58.0));
    }

    TEST_CASE("block decode matches the no-cache reference") {
        const Params params = tiny_model();
        const std::vector<int> prefix = tiny_prefix();
        for (int s : {1, 2, 4}) {
            DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, s);
            Rng rng(7);
            DecodeTrace trace;
            const std::vector<int> got = decode_block_diffusion(params, prefix, cfg, rng, &trace);
            std::vector<std::vector<int>> oracle_positions;
            const std::vector<int> want =
                oracle_block_decode(params, prefix, cfg, &oracle_positions);
            CHECK(got == want);
            REQUIRE(trace.steps.size() == oracle_positions.size());
            for (size_t i = 0; i < trace.steps.size(); ++i)
                CHECK(trace.steps[i].positions == oracle_positions[i]);
        }
    }

    TEST_CASE("shifted block decode matches the no-cache reference") {
        const Params params = tiny_model(17);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        cfg.token_shift = true;
        Rng rng(7);
        const std::vector<int> got = decode_block_diffusion(params, prefix, cfg, rng);
        const std::vector<int> want = oracle_block_decode(params, prefix, cfg);
        CHECK(got == want);
    }

    TEST_CASE("autoregressive decode matches the no-cache reference") {
        const Params params = tiny_model(23);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::autoregressive, 2, 4, 1);
        cfg.token_shift = true;
        Rng rng(7);
        const std::vector<int> got = decode_autoregressive(params, prefix, cfg, rng);
        const std::vector<int> want = oracle_ar_decode(params, prefix, cfg);
        CHECK(got == want);
        CHECK(got.size() == 8);
    }

    TEST_CASE("single block with full step count equals whole-sequence decode") {
        const Params params = tiny_model(29);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig block = base_config(DecoderKind::block_diffusion, 1, 8, 5);
        DecodeConfig full = base_config(DecoderKind::full_diffusion, 1, 8, 5);
        Rng r1(99), r2(99);
        const std::vector<int> a = decode_block_diffusion(params, prefix, block, r1);
        const std::vector<int> b = decode_full_diffusion(params, prefix, full, r2);
        CHECK(a == b);
    }

    TEST_CASE("trace bookkeeping: coverage, pass counts, cache growth") {
        const Params params = tiny_model(31);
        const std::vector<int> prefix = tiny_prefix();
        const int B = 3, L = 4, s = 3;
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, B, L, s);
        Rng rng(1);
        DecodeTrace trace;
        const std::vector<int> tokens = decode_block_diffusion(params, prefix, cfg, rng, &trace);

        CHECK(trace.tokens == tokens);
        CHECK(int(tokens.size()) == B * L);
        REQUIRE(trace.steps.size() == size_t(B) * size_t(s));

        // Every action offset commits exactly once; refinement passes never
        // grow the cache; passes of block b run against a cache of the prefix
        // plus b finished blocks.
        std::vector<int> commit_count(size_t(B) * size_t(L), 0);
        int prev_nfe = 0;
        for (size_t i = 0; i < trace.steps.size(); ++i) {
            const DecodeStep &step = trace.steps[i];
            const int b = int(i) / s;
            const int pass = int(i) % s;
            CHECK(step.block == b);
            CHECK(step.cache_len == int(prefix.size()) + b * L);
            CHECK(step.nfe_after > prev_nfe);
            prev_nfe = step.nfe_after;
            int remaining = 0;
            for (int j = 0; j < L; ++j)
                if (commit_count[size_t(b * L + j)] == 0) ++remaining;
            CHECK(int(step.positions.size()) == commit_schedule(remaining, s - pass));
            for (int p : step.positions) {
                REQUIRE(p >= b * L);
                REQUIRE(p < (b + 1) * L);
                commit_count[size_t(p)] += 1;
            }
        }
        for (int n : commit_count) CHECK(n == 1);
        CHECK(trace.nfe == 1 + B * (s + 1));
        CHECK(trace.wall_seconds >= 0.0);
    }

    TEST_CASE("greedy decode is deterministic and ignores the rng") {
        const Params params = tiny_model(37);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        Rng r1(1), r2(999);
        CHECK(decode_block_diffusion(params, prefix, cfg, r1) ==
              decode_block_diffusion(params, prefix, cfg, r2));
    }

    TEST_CASE("sampled decode is seed-deterministic") {
        const Params params = tiny_model(41);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        cfg.greedy = false;
        cfg.temperature = 2.0;  // flat enough that seeds actually diverge
        Rng r1(5), r2(5);
        const std::vector<int> a = decode_block_diffusion(params, prefix, cfg, r1);
        const std::vector<int> b = decode_block_diffusion(params, prefix, cfg, r2);
        CHECK(a == b);

        bool any_diff = false;
        for (uint64_t seed = 6; seed < 12 && !any_diff; ++seed) {
            Rng r3(seed);
            any_diff = decode_block_diffusion(params, prefix, cfg, r3) != a;
        }
        CHECK(any_diff);
    }

    TEST_CASE("zero-layer model: unshifted rows read their own position") {
        const Params params = zero_layer_model(40);
        const std::vector<int> prefix = tiny_prefix();
        const int expect_mask = zero_layer_argmax(params, 39);
        DecodeConfig cfg = base_config(DecoderKind::full_diffusion, 1, 5, 1);
        Rng rng(1);
        const std::vector<int> got = decode_full_diffusion(params, prefix, cfg, rng);
        CHECK(got == std::vector<int>(5, expect_mask));
    }

    TEST_CASE("zero-layer model: shifted rows read the previous position") {
        const Params params = zero_layer_model(40, 13);
        const std::vector<int> prefix = tiny_prefix();
        const int from_prefix = zero_layer_argmax(params, prefix.back());
        const int from_mask = zero_layer_argmax(params, 39);
        DecodeConfig cfg = base_config(DecoderKind::full_diffusion, 1, 5, 1);
        cfg.token_shift = true;
        Rng rng(1);
        const std::vector<int> got = decode_full_diffusion(params, prefix, cfg, rng);
        REQUIRE(got.size() == 5);
        CHECK(got[0] == from_prefix);
        for (int j = 1; j < 5; ++j) CHECK(got[size_t(j)] == from_mask);

        // Same row selection through the cached block decoder's carry row.
        DecodeConfig blk = base_config(DecoderKind::block_diffusion, 1, 5, 1);
        blk.token_shift = true;
        Rng rng2(1);
        const std::vector<int> got_blk = decode_block_diffusion(params, prefix, blk, rng2);
        CHECK(got_blk == got);
    }

    TEST_CASE("zero-layer model: exact ties commit lowest offsets first") {
        const Params params = zero_layer_model(40, 19);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 1, 5, 2);
        Rng rng(1);
        DecodeTrace trace;
        decode_block_diffusion(params, prefix, cfg, rng, &trace);
        // All open rows hold the mask id, so every confidence ties exactly and
        // the first pass commits ceil(5/2)=3 at offsets 0,1,2.
        REQUIRE(trace.steps.size() == 2);
        CHECK(trace.steps[0].positions == std::vector<int>{0, 1, 2});
        CHECK(trace.steps[1].positions == std::vector<int>{3, 4});
    }

    TEST_CASE("zero-layer model: autoregressive chain follows id transitions") {
        const Params params = zero_layer_model(40, 23);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::autoregressive, 1, 6, 1);
        cfg.token_shift = true;
        Rng rng(1);
        const std::vector<int> got = decode_autoregressive(params, prefix, cfg, rng);
        std::vector<int> want;
        int cur = prefix.back();
        for (int i = 0; i < 6; ++i) {
            cur = zero_layer_argmax(params, cur);
            want.push_back(cur);
        }
        CHECK(got == want);
    }

    TEST_CASE("dispatcher routes on kind") {
        const Params params = tiny_model(43);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        Rng r1(3), r2(3);
        CHECK(decode(params, prefix, cfg, r1) == decode_block_diffusion(params, prefix, cfg, r2));

        cfg.kind = DecoderKind::full_diffusion;
        cfg.steps = 6;
        Rng r3(3), r4(3);
        CHECK(decode(params, prefix, cfg, r3) == decode_full_diffusion(params, prefix, cfg, r4));

        cfg.kind = DecoderKind::autoregressive;
        cfg.token_shift = true;
        Rng r5(3), r6(3);
        CHECK(decode(params, prefix, cfg, r5) == decode_autoregressive(params, prefix, cfg, r6));
    }

    TEST_CASE("float32 instantiation decodes the same tiny sequence") {
        const Params params = tiny_model(47);
        const ParamsF paramsf = to_float32(params);
        const std::vector<int> prefix = tiny_prefix();
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, 4, 2);
        Rng r1(3), r2(3);
        DecodeTrace td, tf;
        decode_block_diffusion(params, prefix, cfg, r1, &td);
        decode_block_diffusion(paramsf, prefix, cfg, r2, &tf);
        CHECK(td.nfe == tf.nfe);
        CHECK(td.token_passes == tf.token_passes);
        CHECK(tf.tokens.size() == td.tokens.size());
    }

    TEST_CASE("captured logits match an uncached forward of the same state") {
        const Params params = tiny_model(53);
        const std::vector<int> prefix = tiny_prefix();
        const int c = int(prefix.size());
        const int L = 4;
        DecodeConfig cfg = base_config(DecoderKind::block_diffusion, 2, L, 2);
        cfg.capture_logits = true;
        Rng rng(3);
        DecodeTrace trace;
        decode_block_diffusion(params, prefix, cfg, rng, &trace);

        // Reconstruct each refinement pass without the cache and compare the
        // rows the decoder actually used.
        std::vector<int> done;  // action tokens of finished blocks
        for (size_t i = 0; i < trace.steps.size(); ++i) {
            const DecodeStep &step = trace.steps[i];
            const int b = step.block;
            std::vector<int> ids = prefix;
            ids.insert(ids.end(), done.begin(), done.end());
            ids.insert(ids.end(), step.input_ids.begin(), step.input_ids.end());
            const BlockLayout layout = BlockLayout::inference(c, b + 1, L);
            std::vector<int> pos(ids.size());
            std::iota(pos.begin(), pos.end(), 0);
            const Mat full = forward(params, ids, pos, diffusion_forcing_mask(layout));
            for (size_t j = 0; j < step.positions.size(); ++j) {
                const int off = step.positions[size_t(j)] - b * L;
                const Eigen::RowVectorXd got = trace.steps[i].logits.row(off);
                const Eigen::RowVectorXd want = full.row(c + b * L + off);
                const double rel = (got - want).cwiseAbs().maxCoeff() /
                                   std::max(1e-9, want.cwiseAbs().maxCoeff());
                CHECK(rel <= 1e-5);
            }
            if ((i + 1) % size_t(cfg.steps) == 0) {
                // Block finished: replay its committed ids into the history.
                std::vector<int> final_ids = step.input_ids;
                for (size_t j = 0; j < step.positions.size(); ++j)
                    final_ids[size_t(step.positions[j] - b * L)] = step.ids[j];
                done.insert(done.end(), final_ids.begin(), final_ids.end());
            }
        }
    }
}
