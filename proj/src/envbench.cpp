// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/envbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace bdp {

namespace {

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double dist3(const std::array<double, 3> &a, const std::array<double, 3> &b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::array<double, 3> quantized_centers(const std::array<double, 3> &v, int levels) {
    return {level_center(quantize_level(v[0], levels), levels),
            level_center(quantize_level(v[1], levels), levels),
            level_center(quantize_level(v[2], levels), levels)};
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void EnvConfig::validate() const {
    if (!(step_cap > 0.0)) throw std::invalid_argument("EnvConfig: step_cap must be positive");
    if (!(goal_tol > 0.0)) throw std::invalid_argument("EnvConfig: goal_tol must be positive");
    if (!(grip_thresh >= 0.0))
        throw std::invalid_argument("EnvConfig: grip_thresh must be non-negative");
    if (horizon < 1) throw std::invalid_argument("EnvConfig: horizon must be >= 1");
    if (position_levels < 2 || position_levels > 32)
        throw std::invalid_argument("EnvConfig: position_levels must be in [2, 32]");
    if (offset_levels < 2 || offset_levels > 32)
        throw std::invalid_argument("EnvConfig: offset_levels must be in [2, 32]");
}

int quantize_level(double v, int levels) {
    const double c = clampd(v, 0.0, 1.0);
    return std::min(levels - 1, int(c * levels));
}

double level_center(int level, int levels) { return (level + 0.5) / levels; }

PointMassEnv::PointMassEnv(const EnvConfig &config, uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    for (int i = 0; i < 3; ++i)
        state_.pos[size_t(i)] = kSampleLo + rng.uniform() * (kSampleHi - kSampleLo);
    for (int i = 0; i < 3; ++i)
        state_.goal[size_t(i)] = kSampleLo + rng.uniform() * (kSampleHi - kSampleLo);
}

PointMassEnv::PointMassEnv(const EnvConfig &config, const std::array<double, 3> &start,
                           const std::array<double, 3> &goal)
    : config_(config) {
    config_.validate();
    state_.pos = start;
    state_.goal = goal;
}

bool PointMassEnv::step(const double *action) {
    for (int i = 0; i < 3; ++i) {
        const double delta = clampd(action[i], -config_.step_cap, config_.step_cap);
        state_.pos[size_t(i)] = clampd(state_.pos[size_t(i)] + delta, 0.0, 1.0);
    }
    state_.gripper_closed = action[kActionDims - 1] > 0.5;
    steps_ += 1;
    const bool at_goal =
        dist3(state_.pos, state_.goal) <= config_.goal_tol && state_.gripper_closed;
    succeeded_ = succeeded_ || at_goal;
    return at_goal;
}

PrefixTokens make_prefix(const EnvState &state, const EnvConfig &config) {
    const Vocab vocab;
    const std::array<double, 3> cpos = quantized_centers(state.pos, config.position_levels);
    const std::array<double, 3> cgoal = quantized_centers(state.goal, config.position_levels);

    // [BOS | SCENE, (sign, |cells|) per axis, dist | pos levels, grip state |
    //  goal levels]. The signed cell difference is the goal offset in grid
    //  cells, the exact quantity the expert plans from.
    PrefixTokens prefix;
    prefix.visual_len = 8;
    prefix.proprio_len = 4;
    prefix.language_len = 3;
    prefix.ids.reserve(16);
    prefix.ids.push_back(vocab.bos_id);

    prefix.ids.push_back(kSceneId);
    for (int i = 0; i < 3; ++i) {
        const int cells = quantize_level(state.goal[size_t(i)], config.position_levels) -
                          quantize_level(state.pos[size_t(i)], config.position_levels);
        prefix.ids.push_back(cells < 0 ? kSignNegId : kSignNonNegId);
        prefix.ids.push_back(kLevelBase + std::abs(cells));
    }
    const double dist = dist3(cgoal, cpos) / std::sqrt(3.0);
    prefix.ids.push_back(kLevelBase + quantize_level(dist, config.offset_levels));

    for (int i = 0; i < 3; ++i)
        prefix.ids.push_back(kLevelBase +
                             quantize_level(state.pos[size_t(i)], config.position_levels));
    prefix.ids.push_back(state.gripper_closed ? kGripClosedStateId : kGripOpenStateId);

    for (int i = 0; i < 3; ++i)
        prefix.ids.push_back(kLevelBase +
                             quantize_level(state.goal[size_t(i)], config.position_levels));
    return prefix;
}

ActionChunk expert_chunk(const EnvState &state, const EnvConfig &config) {
    std::array<double, 3> s = quantized_centers(state.pos, config.position_levels);
    const std::array<double, 3> g = quantized_centers(state.goal, config.position_levels);

    ActionChunk chunk(kChunkHorizon, kActionDims);
    for (int h = 0; h < kChunkHorizon; ++h) {
        for (int i = 0; i < 3; ++i) {
            const double a = clampd(g[size_t(i)] - s[size_t(i)], -config.step_cap, config.step_cap);
            chunk.at(h, i) = a;
            s[size_t(i)] += a;
        }
        for (int i = 3; i < 6; ++i) chunk.at(h, i) = 0.0;
        chunk.at(h, kActionDims - 1) = dist3(s, g) <= config.grip_thresh ? 1.0 : 0.0;
    }
    return chunk;
}

BinTable make_env_bins(const EnvConfig &config) {
    BinTable bins;
    bins.dims = kActionDims;
    bins.bin_count = 256;
    bins.edges.resize(size_t(kActionDims));
    for (int d = 0; d < 3; ++d)
        bins.edges[size_t(d)] = uniform_edges(-config.step_cap, config.step_cap, bins.bin_count);
    for (int d = 3; d < 6; ++d) bins.edges[size_t(d)] = uniform_edges(-1.0, 1.0, bins.bin_count);
    bins.edges[size_t(kActionDims - 1)].clear();
    bins.validate();
    return bins;
}

EpisodeOutcome run_episode(PointMassEnv &env, const ChunkPolicy &policy) {
    while (!env.succeeded() && !env.exhausted()) {
        const ActionChunk chunk = policy(env.state());
        if (chunk.horizon != kChunkHorizon || chunk.dims != kActionDims)
            throw std::invalid_argument("run_episode: policy returned a mis-shaped chunk");
        for (int h = 0; h < chunk.horizon; ++h) {
            if (env.succeeded() || env.exhausted()) break;
            env.step(&chunk.values[size_t(h) * size_t(chunk.dims)]);
        }
    }
    return {env.succeeded(), env.steps_taken()};
}

Dataset gen_dataset(const EnvConfig &config, int episodes, uint64_t seed) {
    config.validate();
    if (episodes < 1) throw std::invalid_argument("gen_dataset: episodes must be >= 1");

    Dataset ds;
    ds.visual_len = 8;
    ds.proprio_len = 4;
    ds.language_len = 3;
    ds.horizon = kChunkHorizon;
    ds.action_dim = kActionDims;
    ds.meta = {{"env", "pointmass-v1"},
               {"seed", std::to_string(seed)},
               {"episodes", std::to_string(episodes)},
               {"step_cap", fmt_g(config.step_cap)},
               {"goal_tol", fmt_g(config.goal_tol)},
               {"grip_thresh", fmt_g(config.grip_thresh)},
               {"position_levels", std::to_string(config.position_levels)},
               {"offset_levels", std::to_string(config.offset_levels)}};

    Rng driver(seed);
    for (int ep = 0; ep < episodes; ++ep) {
        PointMassEnv env(config, driver.bits());
        run_episode(env, [&](const EnvState &state) {
            const ActionChunk chunk = expert_chunk(state, config);
            ds.samples.push_back({make_prefix(state, config).ids, chunk.values});
            return chunk;
        });
        if (!env.succeeded())
            throw std::logic_error("gen_dataset: expert failed to reach the goal in episode " +
                                   std::to_string(ep));
    }
    return ds;
}

EvalResult evaluate_policy(const Params &params, const DecodeConfig &decode_config,
                           const BinTable &bins, const EnvConfig &config, int episodes,
                           uint64_t seed) {
    config.validate();
    decode_config.validate();
    if (episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
    if (decode_config.block_count * decode_config.block_len != kChunkHorizon * kActionDims)
        throw std::invalid_argument("evaluate_policy: decode length must equal the chunk length");

    const Vocab vocab;
    EvalResult result;
    result.episodes = episodes;
    Rng driver(seed);
    for (int ep = 0; ep < episodes; ++ep) {
        const uint64_t ep_seed = driver.bits();
        PointMassEnv env(config, ep_seed);
        Rng decode_rng = Rng::substream(ep_seed, 7777);
        while (!env.succeeded() && !env.exhausted()) {
            const PrefixTokens prefix = make_prefix(env.state(), config);
            const std::vector<int> tokens =
                decode(params, prefix.ids, decode_config, decode_rng);
            ActionChunk chunk;
            try {
                chunk = decode_tokens(tokens, bins, vocab);
            } catch (const std::exception &) {
                result.decode_failures += 1;
                break;
            }
            for (int h = 0; h < chunk.horizon; ++h) {
                if (env.succeeded() || env.exhausted()) break;
                env.step(&chunk.values[size_t(h) * size_t(chunk.dims)]);
            }
        }
        if (env.succeeded()) result.successes += 1;
    }
    return result;
}

std::string BenchReport::to_csv() const {
    std::ostringstream os;
    os << "name,nfe,token_passes,median_wall_s,tokens_per_s\n";
    for (const BenchEntry &e : entries) {
        os << e.name << ',' << e.nfe << ',' << e.token_passes << ',' << fmt_g(e.median_wall_s)
           << ',' << fmt_g(e.tokens_per_s) << '\n';
    }
    if (wall_speedup > 0.0) os << "# wall_speedup," << fmt_g(wall_speedup) << '\n';
    if (token_pass_ratio > 0.0) os << "# token_pass_ratio," << fmt_g(token_pass_ratio) << '\n';
    return os.str();
}

std::string BenchReport::to_table() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %6s %12s %14s %12s\n", "decoder", "nfe", "token_passes",
                  "median_ms", "tokens/s");
    os << buf;
    for (const BenchEntry &e : entries) {
        std::snprintf(buf, sizeof buf, "%-8s %6d %12lld %14.3f %12.1f\n", e.name.c_str(), e.nfe,
                      static_cast<long long>(e.token_passes), e.median_wall_s * 1e3,
                      e.tokens_per_s);
        os << buf;
    }
    if (wall_speedup > 0.0) {
        std::snprintf(buf, sizeof buf, "wall speedup (full/block): %.2fx\n", wall_speedup);
        os << buf;
    }
    if (token_pass_ratio > 0.0) {
        std::snprintf(buf, sizeof buf, "token-pass ratio (full/block): %.3f\n", token_pass_ratio);
        os << buf;
    }
    return os.str();
}

template <typename S>
BenchReport bench_throughput(const ParamsT<S> &params, const std::vector<int> &prefix_ids,
                             const std::vector<std::pair<std::string, DecodeConfig>> &configs,
                             int trials, int warmups) {
    if (trials < 1) throw std::invalid_argument("bench_throughput: trials must be >= 1");
    if (warmups < 0) throw std::invalid_argument("bench_throughput: warmups must be >= 0");

    BenchReport report;
    for (const auto &[name, cfg] : configs) {
        cfg.validate();
        BenchEntry entry;
        entry.name = name;
        std::vector<double> walls;
        for (int i = 0; i < warmups + trials; ++i) {
            Rng rng(cfg.seed);
            DecodeTrace trace;
            decode(params, prefix_ids, cfg, rng, &trace);
            if (i < warmups) continue;
            walls.push_back(trace.wall_seconds);
            if (walls.size() == 1) {
                entry.nfe = trace.nfe;
                entry.token_passes = trace.token_passes;
            } else if (entry.nfe != trace.nfe || entry.token_passes != trace.token_passes) {
                throw std::logic_error("bench_throughput: nonreproducible evaluation counts");
            }
        }
        std::sort(walls.begin(), walls.end());
        const size_t n = walls.size();
        entry.median_wall_s =
            (n % 2 == 1) ? walls[n / 2] : 0.5 * (walls[n / 2 - 1] + walls[n / 2]);
        entry.tokens_per_s =
            double(cfg.block_count) * double(cfg.block_len) / entry.median_wall_s;
        report.entries.push_back(std::move(entry));
    }

    const BenchEntry *block = nullptr;
    const BenchEntry *full = nullptr;
    for (const BenchEntry &e : report.entries) {
        if (e.name == "block") block = &e;
        if (e.name == "full") full = &e;
    }
    if (block && full) {
        report.wall_speedup = full->median_wall_s / block->median_wall_s;
        report.token_pass_ratio = double(full->token_passes) / double(block->token_passes);
    }
    return report;
}

template BenchReport bench_throughput<double>(
    const ParamsT<double> &, const std::vector<int> &,
    const std::vector<std::pair<std::string, DecodeConfig>> &, int, int);
template BenchReport bench_throughput<float>(
    const ParamsT<float> &, const std::vector<int> &,
    const std::vector<std::pair<std::string, DecodeConfig>> &, int, int);

}  // namespace bdp
