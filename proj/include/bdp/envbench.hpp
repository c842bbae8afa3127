// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic 3-D point-mass control task: a scripted expert, dataset
// generation, closed-loop policy evaluation, and the decoder throughput
// benchmark. Prefix tokens encode the quantized observation with reserved
// vocabulary ids, so the expert action is an exact function of the prefix.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bdp/net.hpp"
#include "bdp/rng.hpp"
#include "bdp/sampler.hpp"
#include "bdp/token_codec.hpp"
#include "bdp/trainer.hpp"

namespace bdp {

// Chunk shape shared with the codec: 2 timesteps of [3 translation,
// 3 rotation (held zero), 1 gripper].
inline constexpr int kChunkHorizon = 2;
inline constexpr int kActionDims = 7;

struct EnvConfig {
    double step_cap = 0.15;     // per-axis translation clamp (workspace units)
    double goal_tol = 0.12;     // success distance on the true state
    double grip_thresh = 0.05;  // quantized distance at which the expert closes
    int horizon = 40;           // episode step budget
    int position_levels = 16;   // proprio and goal quantization
    int offset_levels = 8;      // coarse goal-distance quantization

    void validate() const;
};

// Starts and goals are sampled inside [kSampleLo, kSampleHi]^3; the state
// itself stays clamped to the unit cube.
inline constexpr double kSampleLo = 0.05;
inline constexpr double kSampleHi = 0.95;

// Reserved prefix ids (within [Vocab::prefix_base, Vocab::size)).
inline constexpr int kLevelBase = 262;  // quantization levels 0..31
inline constexpr int kSceneId = 294;
inline constexpr int kGripOpenStateId = 296;
inline constexpr int kGripClosedStateId = 297;
// Sign of the per-axis goal offset in grid cells (magnitude uses kLevelBase).
inline constexpr int kSignNonNegId = 298;
inline constexpr int kSignNegId = 299;

// Clamps v into [0, 1], then buckets it into one of `levels` equal cells.
int quantize_level(double v, int levels);
// Center of the cell, the coordinate the expert plans from.
double level_center(int level, int levels);

struct EnvState {
    std::array<double, 3> pos{};
    std::array<double, 3> goal{};
    bool gripper_closed = false;
};

class PointMassEnv {
public:
    // Samples start and goal from the rng substream for this seed.
    PointMassEnv(const EnvConfig &config, uint64_t seed);
    // Fixed start and goal; used by tests and the expert fixed-point check.
    PointMassEnv(const EnvConfig &config, const std::array<double, 3> &start,
                 const std::array<double, 3> &goal);

    // Applies one 7-dim action row: clamped translation, rotations ignored,
    // gripper bit = last dim > 0.5. Returns true when the state is within
    // goal_tol of the goal with the gripper closed.
    bool step(const double *action);

    const EnvState &state() const { return state_; }
    const EnvConfig &config() const { return config_; }
    bool succeeded() const { return succeeded_; }
    int steps_taken() const { return steps_; }
    bool exhausted() const { return steps_ >= config_.horizon; }

private:
    EnvConfig config_;
    EnvState state_;
    bool succeeded_ = false;
    int steps_ = 0;
};

// [BOS | v: SCENE, goal-offset xyz, distance, FILLER | p: position xyz,
//  gripper state, FILLER, FILLER | l: goal xyz]; 16 tokens total.
PrefixTokens make_prefix(const EnvState &state, const EnvConfig &config);

// Plans kChunkHorizon steps from the quantized cell centers: per-axis clipped
// proportional steps toward the quantized goal, gripper closing once the
// planned (virtual) state is within grip_thresh of it. Deterministic in the
// prefix tokens by construction.
ActionChunk expert_chunk(const EnvState &state, const EnvConfig &config);

// Uniform bins over the reachable ranges: translation dims over
// [-step_cap, step_cap], rotation dims over [-1, 1], gripper categorical.
BinTable make_env_bins(const EnvConfig &config);

// Rolls the policy until success or the step budget; the policy is called at
// every chunk boundary with the current state.
using ChunkPolicy = std::function<ActionChunk(const EnvState &)>;
struct EpisodeOutcome {
    bool success = false;
    int steps = 0;
};
EpisodeOutcome run_episode(PointMassEnv &env, const ChunkPolicy &policy);

// Expert rollouts over `episodes` sampled start/goal pairs; one sample per
// chunk boundary. Throws if the expert ever fails (an invariant violation).
Dataset gen_dataset(const EnvConfig &config, int episodes, uint64_t seed);

struct EvalResult {
    int episodes = 0;
    int successes = 0;
    int decode_failures = 0;  // decoded tokens were not a valid action chunk
    double success_rate() const { return episodes ? double(successes) / episodes : 0.0; }
};

// Closed loop: tokenize the state, decode a chunk, execute it, repeat.
// Undecodable chunks (e.g. a mask id survived decoding) fail the episode and
// are tallied. Deterministic given the seed.
EvalResult evaluate_policy(const Params &params, const DecodeConfig &decode_config,
                           const BinTable &bins, const EnvConfig &config, int episodes,
                           uint64_t seed);

struct BenchEntry {
    std::string name;
    int nfe = 0;
    int64_t token_passes = 0;
    double median_wall_s = 0.0;
    double tokens_per_s = 0.0;  // decoded action tokens per second
};

struct BenchReport {
    std::vector<BenchEntry> entries;
    double wall_speedup = 0.0;      // full median / block median, when both present
    double token_pass_ratio = 0.0;  // full passes / block passes, when both present

    std::string to_csv() const;
    std::string to_table() const;
};

// Times each decoder on one fixed prefix, single-threaded: `warmups` unmeasured
// decodes, then the median of `trials` measured ones. NFE and token passes are
// read from the decode traces and must be identical across trials.
template <typename S>
BenchReport bench_throughput(const ParamsT<S> &params, const std::vector<int> &prefix_ids,
                             const std::vector<std::pair<std::string, DecodeConfig>> &configs,
                             int trials = 20, int warmups = 3);

}  // namespace bdp
