// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <string>
#include <vector>

#include "bdp/attention_masks.hpp"
#include "bdp/rng.hpp"

using namespace bdp;

namespace {

// Independent oracle: classify every position, then evaluate the attention
// rules from a flat rule table. Kept deliberately separate from the
// implementation's region helpers.
enum class Kind { prefix, noisy, eos, clean };

struct Pos {
    Kind kind;
    int block;  // -1 for prefix/eos
};

std::vector<Pos> classify(int c, int B, int L, bool eos, bool suffix) {
    std::vector<Pos> out;
    for (int i = 0; i < c; ++i) out.push_back({Kind::prefix, -1});
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < L; ++j) out.push_back({Kind::noisy, b});
    if (eos) out.push_back({Kind::eos, -1});
    if (suffix)
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < L; ++j) out.push_back({Kind::clean, b});
    return out;
}

bool oracle_diffusion(const Pos &q, const Pos &k, int qi, int ki) {
    if (q.kind == Kind::eos) return ki <= qi;
    if (k.kind == Kind::eos) return false;
    if (q.kind == Kind::prefix) return k.kind == Kind::prefix;
    return k.kind == Kind::prefix || k.block <= q.block;
}

bool oracle_teacher(const Pos &q, const Pos &k, int qi, int ki) {
    if (q.kind == Kind::eos) return ki <= qi;
    if (k.kind == Kind::eos) return false;
    if (q.kind == Kind::prefix) return k.kind == Kind::prefix;
    if (q.kind == Kind::noisy) {
        if (k.kind == Kind::prefix) return true;
        if (k.kind == Kind::clean) return k.block < q.block;
        return k.block == q.block;  // other noisy blocks are hidden
    }
    // clean suffix
    return k.kind == Kind::prefix || (k.kind == Kind::clean && k.block <= q.block);
}

bool oracle_full(const Pos &q, const Pos &k, int qi, int ki) {
    if (q.kind == Kind::eos) return ki <= qi;
    if (k.kind == Kind::eos) return false;
    if (q.kind == Kind::prefix) return k.kind == Kind::prefix;
    return true;
}

}  // namespace

TEST_SUITE("attention_masks") {

TEST_CASE("every builder matches the predicate oracle over small layouts") {
    for (int c = 1; c <= 6; ++c) {
        for (int B = 1; B <= 4; ++B) {
            for (int L = 1; L <= 4; ++L) {
                CAPTURE(c);
                CAPTURE(B);
                CAPTURE(L);

                BlockLayout plain = BlockLayout::plain(c, B, L);
                AttnMask df = diffusion_forcing_mask(plain);
                AttnMask full = full_bidirectional_mask(plain);
                auto plain_pos = classify(c, B, L, true, false);
                REQUIRE(df.rows == int(plain_pos.size()));
                for (int q = 0; q < df.rows; ++q) {
                    for (int k = 0; k < df.cols; ++k) {
                        CHECK(bool(df.at(q, k)) == oracle_diffusion(plain_pos[q], plain_pos[k], q, k));
                        CHECK(bool(full.at(q, k)) == oracle_full(plain_pos[q], plain_pos[k], q, k));
                    }
                }

                BlockLayout teacher = BlockLayout::teacher(c, B, L);
                TeacherForcingMask tf = teacher_forcing_mask(teacher);
                auto tf_pos = classify(c, B, L, true, true);
                REQUIRE(tf.mask.rows == int(tf_pos.size()));
                for (int q = 0; q < tf.mask.rows; ++q)
                    for (int k = 0; k < tf.mask.cols; ++k)
                        CHECK(bool(tf.mask.at(q, k)) == oracle_teacher(tf_pos[q], tf_pos[k], q, k));
            }
        }
    }
}

TEST_CASE("hand-enumerated 7-token teacher-forcing matrix") {
    // |c|=2, B=2, L'=1: positions are [p p n0 n1 EOS c0 c1]
    BlockLayout layout = BlockLayout::teacher(2, 2, 1);
    TeacherForcingMask tf = teacher_forcing_mask(layout);
    const char *expect[7] = {
        "1100000",  // prefix
        "1100000",  // prefix
        "1110000",  // noisy 0: prefix + itself, no clean history yet
        "1101010",  // noisy 1: prefix + clean 0 + itself
        "1111100",  // EOS: everything prior + itself
        "1100010",  // clean 0: prefix + itself
        "1100011",  // clean 1: prefix + clean 0 + itself
    };
    REQUIRE(tf.mask.rows == 7);
    for (int q = 0; q < 7; ++q)
        for (int k = 0; k < 7; ++k) CHECK(tf.mask.at(q, k) == (expect[q][k] == '1'));

    std::vector<int> want_pos{0, 1, 2, 3, 4, 2, 3};
    CHECK(tf.position_ids == want_pos);
}

TEST_CASE("prefix rows never reach action columns") {
    for (int B : {1, 3}) {
        BlockLayout plain = BlockLayout::plain(4, B, 5);
        AttnMask df = diffusion_forcing_mask(plain);
        AttnMask full = full_bidirectional_mask(plain);
        for (int q = 0; q < 4; ++q)
            for (int k = 4; k < plain.total_len(); ++k) {
                CHECK(df.at(q, k) == 0);
                CHECK(full.at(q, k) == 0);
            }
    }
}

TEST_CASE("single-block diffusion mask equals the bidirectional baseline") {
    for (int c : {1, 5}) {
        for (int len : {1, 14}) {
            BlockLayout layout = BlockLayout::plain(c, 1, len);
            CHECK(diffusion_forcing_mask(layout) == full_bidirectional_mask(layout));
        }
    }
}

TEST_CASE("EOS attends all prior tokens and is attended by nothing else") {
    BlockLayout layout = BlockLayout::plain(3, 2, 4);
    AttnMask m = diffusion_forcing_mask(layout);
    int e = layout.eos_pos();
    for (int k = 0; k <= e; ++k) CHECK(m.at(e, k) == 1);
    for (int q = 0; q < e; ++q) CHECK(m.at(q, e) == 0);
}

TEST_CASE("causal mask: k <= q, row 0 attends only itself") {
    AttnMask m = ar_causal_mask(5);
    for (int q = 0; q < 5; ++q)
        for (int k = 0; k < 5; ++k) CHECK(bool(m.at(q, k)) == (k <= q));
    CHECK(m.at(0, 0) == 1);
    for (int k = 1; k < 5; ++k) CHECK(m.at(0, k) == 0);
    CHECK_THROWS(ar_causal_mask(0));
}

TEST_CASE("layout variant guards") {
    CHECK_THROWS(diffusion_forcing_mask(BlockLayout::teacher(2, 2, 2)));
    CHECK_THROWS(full_bidirectional_mask(BlockLayout::teacher(2, 2, 2)));
    CHECK_THROWS(teacher_forcing_mask(BlockLayout::plain(2, 2, 2)));
    CHECK_THROWS(plain_position_ids(BlockLayout::teacher(2, 2, 2)));
}

TEST_CASE("plain position ids are consecutive") {
    BlockLayout layout = BlockLayout::plain(3, 2, 4);
    auto pos = plain_position_ids(layout);
    REQUIRE(int(pos.size()) == layout.total_len());
    for (int i = 0; i < int(pos.size()); ++i) CHECK(pos[i] == i);
}

TEST_CASE("unshifted targets sit at masked positions with 1/t weights") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::plain(3, 2, 4);
    std::vector<int> clean(layout.total_len());
    for (int i = 0; i < int(clean.size()); ++i) clean[i] = vocab.is_bin(i) ? i : 0;
    clean[0] = vocab.bos_id;
    clean[layout.eos_pos()] = vocab.eos_id;

    std::vector<int> noisy = clean;
    Rng rng(77);
    CorruptionRecord record = corrupt(noisy, layout, {0.4, 0.8}, vocab, rng);
    LossTargets lt = loss_targets(clean, layout, record, false);
    for (int i = 0; i < layout.total_len(); ++i) {
        if (record.masked[i]) {
            CHECK(lt.targets[i] == clean[i]);
            int b = layout.block_of(i);
            CHECK(lt.weights[i] == doctest::Approx(1.0 / record.timesteps[b]));
        } else {
            CHECK(lt.targets[i] == kIgnoreTarget);
            CHECK(lt.weights[i] == 0.0);
        }
    }
}

TEST_CASE("shifted targets: hand-enumerated 4-token action, everything masked") {
    // positions: [BOS p a0 a1 a2 a3 EOS]; all four action tokens masked
    Vocab vocab;
    BlockLayout layout = BlockLayout::plain(2, 2, 2);
    std::vector<int> clean{vocab.bos_id, vocab.prefix_base, 10, 11, 12, 13, vocab.eos_id};
    std::vector<int> noisy = clean;
    Rng rng(5);
    CorruptionRecord record = corrupt(noisy, layout, {1.0, 1.0}, vocab, rng);

    LossTargets lt = loss_targets(clean, layout, record, true);
    std::vector<int> want{kIgnoreTarget, 10, 11, 12, 13, kIgnoreTarget, kIgnoreTarget};
    CHECK(lt.targets == want);
    CHECK(lt.weights[1] == doctest::Approx(1.0));  // last prefix row predicts a0
    CHECK(lt.weights[5] == 0.0);                   // last action row would predict EOS
    CHECK(lt.shifted);

    LossTargets unshifted = loss_targets(clean, layout, record, false);
    std::vector<int> want0{kIgnoreTarget, kIgnoreTarget, 10, 11, 12, 13, kIgnoreTarget};
    CHECK(unshifted.targets == want0);
}

TEST_CASE("clean-suffix rows are IGNORE in both alignment modes") {
    Vocab vocab;
    BlockLayout layout = BlockLayout::teacher(3, 2, 4);
    std::vector<int> clean(layout.total_len(), 9);
    clean[0] = vocab.bos_id;
    clean[layout.eos_pos()] = vocab.eos_id;
    std::vector<int> noisy = clean;
    Rng rng(13);
    CorruptionRecord record = corrupt(noisy, layout, {1.0, 1.0}, vocab, rng);
    for (bool shift : {false, true}) {
        LossTargets lt = loss_targets(clean, layout, record, shift);
        for (int i = layout.clean_begin(); i < layout.total_len(); ++i) {
            CHECK(lt.targets[i] == kIgnoreTarget);
            CHECK(lt.weights[i] == 0.0);
        }
    }
}

TEST_CASE("text grid dump round-trips the matrix shape") {
    AttnMask m = ar_causal_mask(3);
    CHECK(m.to_text_grid() == "100\n110\n111\n");
}

}  // TEST_SUITE
