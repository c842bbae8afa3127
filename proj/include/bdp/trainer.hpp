// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: corrupt a batch, build masks and targets for the selected
// forcing mode, take an Adam step, checkpoint, resume. Also hosts the flat
// key=value train config and the on-disk dataset format shared with the
// environment tooling.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bdp/attention_masks.hpp"
#include "bdp/corruption.hpp"
#include "bdp/net.hpp"
#include "bdp/rng.hpp"
#include "bdp/token_codec.hpp"

namespace bdp {

enum class ForcingMode { teacher, diffusion };

// full_diffusion trains the single-t whole-sequence objective;
// autoregressive trains a causal next-token model for the throughput
// baseline. Both bypass the forcing-mode machinery.
enum class BaselineMode { none, full_diffusion, autoregressive };

std::string to_string(ForcingMode mode);
std::string to_string(BaselineMode mode);

struct TrainConfig {
    ForcingMode forcing = ForcingMode::diffusion;
    BaselineMode baseline = BaselineMode::none;
    int block_count = 2;
    int block_len = 7;
    int horizon = 2;
    int action_dim = 7;
    int batch_size = 16;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // The 1/t loss weights are heavy-tailed near the timestep floor; clipping
    // the global gradient norm keeps those rare spikes out of the Adam state.
    double grad_clip = 1.0;  // optional key; 0 disables
    int steps = 1500;
    int ckpt_interval = 500;
    bool token_shift = false;
    uint64_t seed = 1;
    int threads = 1;  // optional key; batch items split across threads
    ModelConfig model;

    void validate() const;
    void save(std::ostream &os) const;
    // key=value lines, '#' comments; every non-model key required, unknown
    // keys rejected; model keys (dim, heads, ...) optional with defaults.
    static TrainConfig parse(std::istream &is);
    static TrainConfig load_file(const std::string &path);
};

// One supervised pair: an already-tokenized prefix and the continuous action
// chunk it should produce.
struct Sample {
    std::vector<int> prefix_ids;
    std::vector<double> actions;  // horizon x action_dim, timestep-major
};

struct Dataset {
    int visual_len = 0;  // prefix split after BOS
    int proprio_len = 0;
    int language_len = 0;
    int horizon = 0;
    int action_dim = 0;
    std::vector<std::pair<std::string, std::string>> meta;  // generator settings, passthrough
    std::vector<Sample> samples;

    int prefix_len() const { return 1 + visual_len + proprio_len + language_len; }
    void validate(const Vocab &vocab) const;
    void save(std::ostream &os) const;
    static Dataset load(std::istream &is);
    void save_file(const std::string &path) const;
    static Dataset load_file(const std::string &path);
};

struct TrainState {
    Params params;
    Params adam_m, adam_v;
    int64_t step = 0;
    Rng rng;
    double last_loss = 0.0;
};

struct StepStats {
    int64_t step = 0;  // number of completed steps after this one
    double loss = 0.0;
    double mask_fraction = 0.0;
    double wall_ms = 0.0;
};

struct BuildInfo {
    std::vector<double> timesteps;
    double mask_fraction = 0.0;
};

class Trainer {
public:
    // Fresh run: params initialized from config.seed.
    Trainer(TrainConfig config, Dataset data, BinTable bins);
    // Resumed run: state restored from a checkpoint.
    Trainer(TrainConfig config, Dataset data, BinTable bins, TrainState state);

    // Corrupts one sample and assembles (ids, position ids, mask, targets,
    // weights) for the configured mode. Weights fold 1/(B * masked count)
    // into the 1/t factors so the loss is the per-block average.
    TrainingExample make_training_example(const Sample &sample, Rng &rng,
                                          BuildInfo *info = nullptr) const;

    // One batch + Adam update. Loss is reported pre-update. Throws on a
    // non-finite loss with the step, timesteps, and mask fractions.
    StepStats train_step();

    // Steps until config.steps, appending "step,loss,mask_fraction_mean,wall_ms"
    // rows to csv_log (header included when starting from step 0) and saving a
    // checkpoint every config.ckpt_interval steps plus at the end when
    // ckpt_dir is nonempty.
    void run(std::ostream *csv_log, const std::string &ckpt_dir);

    const TrainConfig &config() const { return config_; }
    const TrainState &state() const { return state_; }
    const BinTable &bins() const { return bins_; }

    void save_checkpoint(const std::string &dir) const;

    struct Loaded {
        TrainConfig config;
        TrainState state;
        BinTable bins;
    };
    static Loaded load_checkpoint(const std::string &dir);

private:
    TrainConfig config_;
    Dataset data_;
    BinTable bins_;
    Vocab vocab_;
    TrainState state_;
    // layout/mask/position ids are config-determined, built once
    BlockLayout layout_;
    AttnMask mask_;
    std::vector<int> position_ids_;
};

}  // namespace bdp
