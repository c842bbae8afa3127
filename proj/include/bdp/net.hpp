// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm transformer with hand-written reverse-mode gradients.
// Rotary phases come from explicit position ids (never from array index),
// attention is gated by arbitrary boolean masks, and decode reuses an
// append-only KV cache. Double precision is the training scalar; a float32
// instantiation exists for throughput measurements only.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bdp/attention_masks.hpp"
#include "bdp/rng.hpp"

namespace bdp {

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mat = MatT<double>;

struct ModelConfig {
    int vocab_size = 300;
    int dim = 128;
    int heads = 4;
    int layers = 4;
    int ffn = 512;
    double rope_base = 10000.0;
    double init_scale = 0.02;

    int head_dim() const { return dim / heads; }
    void validate() const;
};

// One attention + MLP block. Attention carries no biases; the MLP does.
template <typename S>
struct AttnLayerT {
    MatT<S> ln1_g, ln1_b;    // dim x 1
    MatT<S> wq, wk, wv, wo;  // dim x dim
    MatT<S> ln2_g, ln2_b;    // dim x 1
    MatT<S> w1, b1;          // dim x ffn, ffn x 1
    MatT<S> w2, b2;          // ffn x dim, dim x 1
};

template <typename S>
struct ParamsT {
    ModelConfig config;
    MatT<S> embed;  // vocab x dim
    std::vector<AttnLayerT<S>> layers;
    MatT<S> lnf_g, lnf_b;  // dim x 1
    MatT<S> head;          // dim x vocab, untied from the embedding
};
using Params = ParamsT<double>;
using ParamsF = ParamsT<float>;

// Visits every tensor in a fixed order with a stable name; the order defines
// serialization layout and gradient reduction order.
template <typename P, typename F>
void for_each_tensor(P &params, F &&fn) {
    fn("embed", params.embed);
    for (size_t l = 0; l < params.layers.size(); ++l) {
        auto &layer = params.layers[l];
        std::string p = "layers." + std::to_string(l) + ".";
        fn(p + "ln1_g", layer.ln1_g);
        fn(p + "ln1_b", layer.ln1_b);
        fn(p + "wq", layer.wq);
        fn(p + "wk", layer.wk);
        fn(p + "wv", layer.wv);
        fn(p + "wo", layer.wo);
        fn(p + "ln2_g", layer.ln2_g);
        fn(p + "ln2_b", layer.ln2_b);
        fn(p + "w1", layer.w1);
        fn(p + "b1", layer.b1);
        fn(p + "w2", layer.w2);
        fn(p + "b2", layer.b2);
    }
    fn("lnf_g", params.lnf_g);
    fn("lnf_b", params.lnf_b);
    fn("head", params.head);
}

// Weights N(0, init_scale), layernorm gains 1, all biases 0.
Params init_params(const ModelConfig &config, Rng &rng);
Params zeros_like(const Params &params);
ParamsF to_float32(const Params &params);
int64_t count_params(const ModelConfig &config);

// Committed keys are stored post-rotary, so cached entries never depend on
// later tokens; entries and their position ids only ever grow.
template <typename S>
struct KvCacheT {
    std::vector<MatT<S>> k, v;  // per layer, committed x dim
    std::vector<int> position_ids;

    int len() const { return int(position_ids.size()); }
};
using KvCache = KvCacheT<double>;

template <typename S>
KvCacheT<S> make_cache(const ModelConfig &config);

// Pre-softmax attention scores, one (heads*N) x K stack per layer.
template <typename S>
struct ForwardDebugT {
    std::vector<MatT<S>> attn_scores;
};

// Runs ids through the network. The mask must be N x N without a cache and
// N x (cache len + N) with one; update_cache=true appends this call's keys
// and values. logit_rows limits the output head to those rows (other rows of
// the result are zero); null computes every row.
template <typename S>
MatT<S> forward(const ParamsT<S> &params, const std::vector<int> &ids,
                const std::vector<int> &position_ids, const AttnMask &mask,
                KvCacheT<S> *cache = nullptr, bool update_cache = false,
                const std::vector<int> *logit_rows = nullptr,
                ForwardDebugT<S> *debug = nullptr);

struct TrainingExample {
    std::vector<int> ids;
    std::vector<int> position_ids;
    AttnMask mask;
    std::vector<int> targets;     // kIgnoreTarget outside the loss
    std::vector<double> weights;  // per-position CE weight
};

// Mean over the batch of the per-example weighted cross entropy
// sum_i w_i * CE_i. Gradients accumulate into grad (overwritten) in batch
// order; with threads > 1 the batch splits into contiguous chunks whose
// partial gradients are reduced in chunk order, so results are independent
// of scheduling.
double loss_and_grad(const Params &params, const std::vector<TrainingExample> &batch, Params &grad,
                     int threads = 1);

// Forward-only loss of a single example; the finite-difference reference.
double loss_only(const Params &params, const TrainingExample &example);

}  // namespace bdp
