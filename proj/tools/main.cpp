// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: dataset generation, training, closed-loop
// evaluation, decoder throughput benchmarking, single-chunk decoding, and
// attention-mask inspection.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bdp/envbench.hpp"

namespace fs = std::filesystem;
using namespace bdp;

namespace {

DecoderKind parse_decoder(const std::string &name) {
    if (name == "block") return DecoderKind::block_diffusion;
    if (name == "full") return DecoderKind::full_diffusion;
    if (name == "ar") return DecoderKind::autoregressive;
    throw std::invalid_argument("unknown decoder '" + name + "' (expected block|full|ar)");
}

// Decode settings derived from how the checkpoint was trained.
DecodeConfig decode_config_for(const TrainConfig &train, const std::string &decoder, int steps,
                               double temperature, uint64_t seed) {
    DecodeConfig cfg;
    cfg.kind = parse_decoder(decoder);
    cfg.block_count = train.block_count;
    cfg.block_len = train.block_len;
    cfg.token_shift = train.token_shift;
    cfg.seed = seed;
    if (temperature > 0.0) {
        cfg.greedy = false;
        cfg.temperature = temperature;
    }
    if (steps > 0) {
        cfg.steps = steps;
    } else {
        cfg.steps = cfg.kind == DecoderKind::full_diffusion ? 12 : 2;
    }
    if (cfg.kind == DecoderKind::autoregressive && !train.token_shift)
        throw std::invalid_argument(
            "autoregressive decoding needs a checkpoint trained with token_shift=true");
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const std::string &out, const std::string &bins_out, int episodes,
                 uint64_t seed) {
    const EnvConfig env;
    const Dataset ds = gen_dataset(env, episodes, seed);
    ds.save_file(out);
    std::cout << "wrote " << ds.samples.size() << " samples from " << episodes << " episodes to "
              << out << "\n";
    if (!bins_out.empty()) {
        make_env_bins(env).save_file(bins_out);
        std::cout << "wrote bin table to " << bins_out << "\n";
    }
    return 0;
}

int cmd_train(const std::string &config_path, const std::string &data_path,
              const std::string &bins_path, const std::string &out_dir,
              const std::string &resume_dir, int steps_override, int threads_override,
              std::string log_path) {
    const Dataset data = Dataset::load_file(data_path);
    fs::create_directories(out_dir);
    if (log_path.empty()) log_path = (fs::path(out_dir) / "train_log.csv").string();

    std::unique_ptr<Trainer> trainer;
    bool resumed = false;
    if (!resume_dir.empty()) {
        Trainer::Loaded loaded = Trainer::load_checkpoint(resume_dir);
        if (steps_override > 0) loaded.config.steps = steps_override;
        if (threads_override > 0) loaded.config.threads = threads_override;
        trainer = std::make_unique<Trainer>(loaded.config, data, loaded.bins,
                                            std::move(loaded.state));
        resumed = true;
    } else {
        if (config_path.empty())
            throw std::invalid_argument("train: --config is required unless resuming");
        TrainConfig config = TrainConfig::load_file(config_path);
        if (steps_override > 0) config.steps = steps_override;
        if (threads_override > 0) config.threads = threads_override;
        const BinTable bins = bins_path.empty() ? make_env_bins(EnvConfig{})
                                                : BinTable::load_file(bins_path);
        trainer = std::make_unique<Trainer>(config, data, bins);
    }

    std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log file " + log_path);
    std::cout << (resumed ? "resuming" : "training") << " to step " << trainer->config().steps
              << ", " << count_params(trainer->config().model) << " parameters, log " << log_path
              << "\n";
    trainer->run(&log, out_dir);
    std::cout << "done: step " << trainer->state().step << ", last loss "
              << trainer->state().last_loss << ", checkpoint in " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string &ckpt, int episodes, uint64_t seed, const std::string &decoder,
             int steps, double temperature) {
    const Trainer::Loaded loaded = Trainer::load_checkpoint(ckpt);
    const DecodeConfig cfg =
        decode_config_for(loaded.config, decoder, steps, temperature, seed ^ 0x5eedULL);
    const EnvConfig env;
    const EvalResult r =
        evaluate_policy(loaded.state.params, cfg, loaded.bins, env, episodes, seed);
    std::cout << "decoder " << decoder << ": " << r.successes << "/" << r.episodes
              << " episodes succeeded (" << 100.0 * r.success_rate() << "%), "
              << r.decode_failures << " undecodable chunks\n";
    return 0;
}

int cmd_bench(const std::string &ckpt, int trials, int warmups, bool use_f64, int block_steps,
              int full_steps, uint64_t seed, const std::string &csv_path) {
    const Trainer::Loaded loaded = Trainer::load_checkpoint(ckpt);
    const TrainConfig &train = loaded.config;
    const EnvConfig env;
    PointMassEnv scene(env, seed);
    const std::vector<int> prefix = make_prefix(scene.state(), env).ids;

    std::vector<std::pair<std::string, DecodeConfig>> configs;
    configs.emplace_back("block",
                         decode_config_for(train, "block", block_steps, 0.0, seed));
    configs.emplace_back("full", decode_config_for(train, "full", full_steps, 0.0, seed));
    if (train.token_shift)
        configs.emplace_back("ar", decode_config_for(train, "ar", 1, 0.0, seed));

    BenchReport report;
    if (use_f64) {
        report = bench_throughput(loaded.state.params, prefix, configs, trials, warmups);
    } else {
        report = bench_throughput(to_float32(loaded.state.params), prefix, configs, trials,
                                  warmups);
    }
    std::cout << report.to_table();
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw std::runtime_error("bench: cannot open " + csv_path);
        os << report.to_csv();
        std::cout << "wrote " << csv_path << "\n";
    }
    return 0;
}

int cmd_sample(const std::string &ckpt, const std::string &decoder, int steps, uint64_t seed,
               double temperature, bool show_trace) {
    const Trainer::Loaded loaded = Trainer::load_checkpoint(ckpt);
    const DecodeConfig cfg =
        decode_config_for(loaded.config, decoder, steps, temperature, seed);
    const EnvConfig env;
    PointMassEnv scene(env, seed);
    const std::vector<int> prefix = make_prefix(scene.state(), env).ids;

    Rng rng(cfg.seed);
    DecodeTrace trace;
    const std::vector<int> tokens = decode(loaded.state.params, prefix, cfg, rng, &trace);

    std::cout << "tokens:";
    for (int t : tokens) std::cout << ' ' << t;
    std::cout << "\nnfe " << trace.nfe << ", token passes " << trace.token_passes << ", wall "
              << trace.wall_seconds * 1e3 << " ms\n";
    try {
        const ActionChunk chunk = decode_tokens(tokens, loaded.bins, Vocab{});
        for (int h = 0; h < chunk.horizon; ++h) {
            std::cout << "step " << h << ":";
            for (int d = 0; d < chunk.dims; ++d) std::cout << ' ' << chunk.at(h, d);
            std::cout << "\n";
        }
    } catch (const std::exception &e) {
        std::cout << "undecodable chunk: " << e.what() << "\n";
    }
    if (show_trace) {
        for (const DecodeStep &s : trace.steps) {
            std::cout << "pass(block=" << s.block << ", cache=" << s.cache_len << ") committed";
            for (size_t i = 0; i < s.positions.size(); ++i)
                std::cout << ' ' << s.positions[i] << ":" << s.ids[i];
            std::cout << "\n";
        }
    }
    return 0;
}

int cmd_dump_masks(int prefix_len, int blocks, int block_len, const std::string &variant) {
    if (variant == "df") {
        const BlockLayout layout = BlockLayout::plain(prefix_len, blocks, block_len);
        std::cout << diffusion_forcing_mask(layout).to_text_grid();
    } else if (variant == "tf") {
        const BlockLayout layout = BlockLayout::teacher(prefix_len, blocks, block_len);
        const TeacherForcingMask tf = teacher_forcing_mask(layout);
        std::cout << tf.mask.to_text_grid() << "position ids:";
        for (int p : tf.position_ids) std::cout << ' ' << p;
        std::cout << "\n";
    } else if (variant == "full") {
        const BlockLayout layout = BlockLayout::plain(prefix_len, 1, blocks * block_len);
        std::cout << full_bidirectional_mask(layout).to_text_grid();
    } else if (variant == "ar") {
        const BlockLayout layout = BlockLayout::plain(prefix_len, blocks, block_len);
        std::cout << ar_causal_mask(layout.total_len()).to_text_grid();
    } else {
        throw std::invalid_argument("unknown variant '" + variant + "' (expected df|tf|full|ar)");
    }
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"block-diffusion action policy toolkit"};
    app.require_subcommand(1);

    auto *gen = app.add_subcommand("gen-data", "generate an expert dataset");
    std::string gen_out = "dataset.txt", gen_bins = "";
    int gen_episodes = 200;
    uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "dataset file");
    gen->add_option("--bins", gen_bins, "also write the bin table here");
    gen->add_option("--episodes", gen_episodes, "episode count");
    gen->add_option("--seed", gen_seed, "generation seed");

    auto *train = app.add_subcommand("train", "train a policy");
    std::string tr_config, tr_data, tr_bins, tr_out = "ckpt", tr_resume, tr_log;
    int tr_steps = -1, tr_threads = -1;
    train->add_option("--config", tr_config, "train config file");
    train->add_option("--data", tr_data, "dataset file")->required();
    train->add_option("--bins", tr_bins, "bin table (default: environment bins)");
    train->add_option("--out", tr_out, "checkpoint directory");
    train->add_option("--resume", tr_resume, "resume from this checkpoint directory");
    train->add_option("--steps", tr_steps, "override total step count");
    train->add_option("--threads", tr_threads, "override worker thread count");
    train->add_option("--log", tr_log, "CSV log path (default: train_log.csv in --out)");

    auto *eval = app.add_subcommand("eval", "closed-loop success rate");
    std::string ev_ckpt, ev_decoder = "block";
    int ev_episodes = 100, ev_steps = -1;
    uint64_t ev_seed = 2;
    double ev_temp = 0.0;
    eval->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
    eval->add_option("--episodes", ev_episodes, "episode count");
    eval->add_option("--seed", ev_seed, "evaluation seed");
    eval->add_option("--decoder", ev_decoder, "block|full|ar");
    eval->add_option("--steps", ev_steps, "denoise passes (default 2 block, 12 full)");
    eval->add_option("--temperature", ev_temp, "sample at this temperature (0 = greedy)");

    auto *bench = app.add_subcommand("bench", "decoder throughput benchmark");
    std::string be_ckpt, be_csv;
    int be_trials = 20, be_warmups = 3, be_block_steps = 2, be_full_steps = 12;
    uint64_t be_seed = 7;
    bool be_f64 = false;
    bench->add_option("--ckpt", be_ckpt, "checkpoint directory")->required();
    bench->add_option("--trials", be_trials, "measured trials");
    bench->add_option("--warmups", be_warmups, "unmeasured warmup decodes");
    bench->add_option("--block-steps", be_block_steps, "denoise passes per block");
    bench->add_option("--full-steps", be_full_steps, "whole-sequence denoise passes");
    bench->add_option("--seed", be_seed, "scene seed");
    bench->add_option("--csv", be_csv, "also write the report as CSV");
    bench->add_flag("--f64", be_f64, "time the double-precision weights (default float32)");

    auto *sample = app.add_subcommand("sample", "decode one chunk and print it");
    std::string sa_ckpt, sa_decoder = "block";
    int sa_steps = -1;
    uint64_t sa_seed = 5;
    double sa_temp = 0.0;
    bool sa_trace = false;
    sample->add_option("--ckpt", sa_ckpt, "checkpoint directory")->required();
    sample->add_option("--decoder", sa_decoder, "block|full|ar");
    sample->add_option("--steps", sa_steps, "denoise passes (default 2 block, 12 full)");
    sample->add_option("--seed", sa_seed, "scene and sampling seed");
    sample->add_option("--temperature", sa_temp, "sample at this temperature (0 = greedy)");
    sample->add_flag("--trace", sa_trace, "print per-pass commits");

    auto *masks = app.add_subcommand("dump-masks", "print an attention mask grid");
    int dm_prefix = 4, dm_blocks = 2, dm_block_len = 3;
    std::string dm_variant = "df";
    masks->add_option("--prefix-len", dm_prefix, "prefix length");
    masks->add_option("--blocks", dm_blocks, "block count");
    masks->add_option("--block-len", dm_block_len, "block length");
    masks->add_option("--variant", dm_variant, "df|tf|full|ar");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_bins, gen_episodes, gen_seed);
        if (train->parsed())
            return cmd_train(tr_config, tr_data, tr_bins, tr_out, tr_resume, tr_steps, tr_threads,
                             tr_log);
        if (eval->parsed())
            return cmd_eval(ev_ckpt, ev_episodes, ev_seed, ev_decoder, ev_steps, ev_temp);
        if (bench->parsed())
            return cmd_bench(be_ckpt, be_trials, be_warmups, be_f64, be_block_steps, be_full_steps,
                             be_seed, be_csv);
        if (sample->parsed())
            return cmd_sample(sa_ckpt, sa_decoder, sa_steps, sa_seed, sa_temp, sa_trace);
        if (masks->parsed()) return cmd_dump_masks(dm_prefix, dm_blocks, dm_block_len, dm_variant);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
