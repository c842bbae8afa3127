// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "bdp/corruption.hpp"
#include "bdp/rng.hpp"

using namespace bdp;

namespace {

std::vector<int> clean_sequence(const BlockLayout &layout, const Vocab &vocab) {
    std::vector<int> ids(layout.total_len(), 7);
    ids[0] = vocab.bos_id;
    for (int i = 1; i < layout.prefix_len; ++i) ids[i] = vocab.prefix_base + i;
    if (layout.has_eos) ids[layout.eos_pos()] = vocab.eos_id;
    return ids;
}

}  // namespace

TEST_SUITE("corruption") {

TEST_CASE("timesteps stay inside the clamped interval and match their mean") {
    Rng rng(101);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        auto t = sample_timesteps(1, rng);
        CHECK(t[0] > kTimestepFloor - 1e-15);
        CHECK(t[0] <= 1.0);
        sum += t[0];
    }
    // clamped uniform on (eps, 1] has mean (1 + eps) / 2; std of the sample
    // mean is sigma/sqrt(n) with sigma ~ (1-eps)/sqrt(12)
    double mean = sum / n;
    double expect = (1.0 + kTimestepFloor) / 2.0;
    double band = 4.0 * (1.0 - kTimestepFloor) / std::sqrt(12.0) / std::sqrt(double(n));
    CHECK(std::abs(mean - expect) < band);
}

TEST_CASE("mask fraction per block tracks its own timestep") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::plain(5, 2, 2000);
    Rng rng(202);
    std::vector<double> t{0.25, 0.9};

    std::vector<int> ids = clean_sequence(layout, vocab);
    CorruptionRecord record = corrupt(ids, layout, t, vocab, rng);

    for (int b = 0; b < 2; ++b) {
        double frac = double(record.masked_count(layout, b)) / layout.block_len;
        double sigma = std::sqrt(t[b] * (1 - t[b]) / layout.block_len);
        CHECK(std::abs(frac - t[b]) < 4.0 * sigma + 1e-9);
    }
}

TEST_CASE("prefix, EOS, and clean suffix are never masked") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::teacher(6, 2, 7);
    Rng rng(303);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> ids = clean_sequence(layout, vocab);
        std::vector<int> before = ids;
        CorruptionRecord record = corrupt(ids, layout, {1.0, 1.0}, vocab, rng);
        for (int i = 0; i < layout.total_len(); ++i) {
            bool in_action = i >= layout.action_begin() && i < layout.action_end();
            if (!in_action) {
                CHECK(ids[i] == before[i]);
                CHECK(record.masked[i] == 0);
                CHECK(record.loss_weights[i] == 0.0);
            } else {
                // t = 1 masks every action token
                CHECK(ids[i] == vocab.mask_id);
                CHECK(record.loss_weights[i] == doctest::Approx(1.0));
            }
        }
    }
}

TEST_CASE("loss weights are 1/t at masked action positions") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::plain(4, 2, 64);
    Rng rng(404);
    std::vector<double> t{0.2, 0.5};
    std::vector<int> ids = clean_sequence(layout, vocab);
    CorruptionRecord record = corrupt(ids, layout, t, vocab, rng);
    for (int i = layout.action_begin(); i < layout.action_end(); ++i) {
        int b = layout.block_of(i);
        if (record.masked[i]) {
            CHECK(record.loss_weights[i] == doctest::Approx(1.0 / t[b]));
            CHECK(ids[i] == vocab.mask_id);
        } else {
            CHECK(record.loss_weights[i] == 0.0);
            CHECK(ids[i] == 7);
        }
    }
}

TEST_CASE("per-block substreams: one block's pattern is independent of the other's width") {
    // Masking block 0 must produce the same pattern whether or not block 1
    // exists, because each block draws from its own substream.
    Vocab vocab;

    auto mask_pattern = [&](int block_count) {
        BlockLayout layout = BlockLayout::plain(3, block_count, 32);
        std::vector<int> ids = clean_sequence(layout, vocab);
        // identically seeded drivers hand corrupt() the same root seed
        Rng driver(4242);
        std::vector<double> t(block_count, 0.5);
        CorruptionRecord rec = corrupt(ids, layout, t, vocab, driver);
        std::vector<uint8_t> block0(rec.masked.begin() + layout.action_begin(),
                                    rec.masked.begin() + layout.action_begin() + 32);
        return block0;
    };

    CHECK(mask_pattern(1) == mask_pattern(4));
}

TEST_CASE("identical rng state reproduces the corruption exactly") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::plain(5, 3, 16);
    std::vector<int> a = clean_sequence(layout, vocab);
    std::vector<int> b = a;
    Rng r1(999), r2(999);
    CorruptionRecord ra = corrupt(a, layout, vocab, r1);
    CorruptionRecord rb = corrupt(b, layout, vocab, r2);
    CHECK(a == b);
    CHECK(ra.timesteps == rb.timesteps);
    CHECK(ra.masked == rb.masked);
    CHECK(ra.root_seed == rb.root_seed);
}

TEST_CASE("argument validation") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::plain(4, 2, 8);
    Rng rng(1);
    std::vector<int> ids(layout.total_len(), 7);
    std::vector<int> wrong(layout.total_len() + 1, 7);
    CHECK_THROWS(corrupt(wrong, layout, {0.5, 0.5}, vocab, rng));
    CHECK_THROWS(corrupt(ids, layout, {0.5}, vocab, rng));
    CHECK_THROWS(corrupt(ids, layout, {0.5, 0.0}, vocab, rng));  // below the floor
    CHECK_THROWS(corrupt(ids, layout, {0.5, 1.5}, vocab, rng));
}

}  // TEST_SUITE
