// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace bdp {

namespace {

std::string trim(const std::string &s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string &key, const std::string &value) {
    try {
        size_t used = 0;
        int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" + value +
                                    "'");
    }
}

double parse_double(const std::string &key, const std::string &value) {
    try {
        size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' needs a number, got '" + value +
                                    "'");
    }
}

bool parse_bool(const std::string &key, const std::string &value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' needs true/false, got '" + value + "'");
}

// Returns false for unknown keys so callers can reject them.
bool set_config_key(TrainConfig &cfg, const std::string &key, const std::string &value) {
    if (key == "forcing") {
        if (value == "teacher")
            cfg.forcing = ForcingMode::teacher;
        else if (value == "diffusion")
            cfg.forcing = ForcingMode::diffusion;
        else
            throw std::invalid_argument("config: forcing must be teacher or diffusion");
    } else if (key == "baseline") {
        if (value == "none")
            cfg.baseline = BaselineMode::none;
        else if (value == "full_diffusion")
            cfg.baseline = BaselineMode::full_diffusion;
        else if (value == "autoregressive")
            cfg.baseline = BaselineMode::autoregressive;
        else
            throw std::invalid_argument(
                "config: baseline must be none, full_diffusion, or autoregressive");
    } else if (key == "block_count") {
        cfg.block_count = parse_int(key, value);
    } else if (key == "block_len") {
        cfg.block_len = parse_int(key, value);
    } else if (key == "horizon") {
        cfg.horizon = parse_int(key, value);
    } else if (key == "action_dim") {
        cfg.action_dim = parse_int(key, value);
    } else if (key == "batch_size") {
        cfg.batch_size = parse_int(key, value);
    } else if (key == "lr") {
        cfg.lr = parse_double(key, value);
    } else if (key == "beta1") {
        cfg.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
        cfg.beta2 = parse_double(key, value);
    } else if (key == "adam_eps") {
        cfg.adam_eps = parse_double(key, value);
    } else if (key == "grad_clip") {
        cfg.grad_clip = parse_double(key, value);
    } else if (key == "steps") {
        cfg.steps = parse_int(key, value);
    } else if (key == "ckpt_interval") {
        cfg.ckpt_interval = parse_int(key, value);
    } else if (key == "token_shift") {
        cfg.token_shift = parse_bool(key, value);
    } else if (key == "seed") {
        cfg.seed = std::stoull(value);
    } else if (key == "threads") {
        cfg.threads = parse_int(key, value);
    } else if (key == "vocab_size") {
        cfg.model.vocab_size = parse_int(key, value);
    } else if (key == "dim") {
        cfg.model.dim = parse_int(key, value);
    } else if (key == "heads") {
        cfg.model.heads = parse_int(key, value);
    } else if (key == "layers") {
        cfg.model.layers = parse_int(key, value);
    } else if (key == "ffn") {
        cfg.model.ffn = parse_int(key, value);
    } else if (key == "rope_base") {
        cfg.model.rope_base = parse_double(key, value);
    } else if (key == "init_scale") {
        cfg.model.init_scale = parse_double(key, value);
    } else {
        return false;
    }
    return true;
}

const char *kRequiredKeys[] = {"forcing",    "baseline",  "block_count", "block_len",
                               "horizon",    "action_dim", "batch_size",  "lr",
                               "beta1",      "beta2",     "adam_eps",    "steps",
                               "ckpt_interval", "token_shift", "seed"};

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string to_string(ForcingMode mode) {
    return mode == ForcingMode::teacher ? "teacher" : "diffusion";
}

std::string to_string(BaselineMode mode) {
    switch (mode) {
        case BaselineMode::none: return "none";
        case BaselineMode::full_diffusion: return "full_diffusion";
        default: return "autoregressive";
    }
}

void TrainConfig::validate() const {
    model.validate();
    if (block_count < 1 || block_len < 1 || horizon < 1 || action_dim < 1)
        throw std::invalid_argument("train config: block/chunk sizes must be positive");
    if (block_count * block_len != horizon * action_dim)
        throw std::invalid_argument("train config: block_count*block_len must equal horizon*action_dim");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
    if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must not be negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train config: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam_eps must be positive");
    if (grad_clip < 0.0 || !std::isfinite(grad_clip))
        throw std::invalid_argument("train config: grad_clip must be >= 0");
    if (steps < 1 || ckpt_interval < 1)
        throw std::invalid_argument("train config: steps and ckpt_interval must be positive");
    if (threads < 1) throw std::invalid_argument("train config: threads must be positive");
    if (baseline != BaselineMode::none && forcing != ForcingMode::diffusion)
        throw std::invalid_argument("train config: baselines replace the forcing mode; use forcing=diffusion");
    if (baseline == BaselineMode::autoregressive && !token_shift)
        throw std::invalid_argument("train config: the autoregressive baseline requires token_shift=true");
}

void TrainConfig::save(std::ostream &os) const {
    os << "forcing=" << to_string(forcing) << "\n";
    os << "baseline=" << to_string(baseline) << "\n";
    os << "block_count=" << block_count << "\n";
    os << "block_len=" << block_len << "\n";
    os << "horizon=" << horizon << "\n";
    os << "action_dim=" << action_dim << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "lr=" << fmt_double(lr) << "\n";
    os << "beta1=" << fmt_double(beta1) << "\n";
    os << "beta2=" << fmt_double(beta2) << "\n";
    os << "adam_eps=" << fmt_double(adam_eps) << "\n";
    os << "grad_clip=" << fmt_double(grad_clip) << "\n";
    os << "steps=" << steps << "\n";
    os << "ckpt_interval=" << ckpt_interval << "\n";
    os << "token_shift=" << (token_shift ? "true" : "false") << "\n";
    os << "seed=" << seed << "\n";
    os << "threads=" << threads << "\n";
    os << "vocab_size=" << model.vocab_size << "\n";
    os << "dim=" << model.dim << "\n";
    os << "heads=" << model.heads << "\n";
    os << "layers=" << model.layers << "\n";
    os << "ffn=" << model.ffn << "\n";
    os << "rope_base=" << fmt_double(model.rope_base) << "\n";
    os << "init_scale=" << fmt_double(model.init_scale) << "\n";
}

TrainConfig TrainConfig::parse(std::istream &is) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!set_config_key(cfg, key, value))
            throw std::invalid_argument("config: unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    for (const char *key : kRequiredKeys)
        if (!seen.count(key))
            throw std::invalid_argument(std::string("config: missing required key '") + key + "'");
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::load_file(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    return parse(f);
}

void Dataset::validate(const Vocab &vocab) const {
    if (visual_len < 0 || proprio_len < 0 || language_len < 0)
        throw std::invalid_argument("dataset: negative prefix region length");
    if (horizon < 1 || action_dim < 1)
        throw std::invalid_argument("dataset: horizon and action_dim must be positive");
    if (samples.empty()) throw std::invalid_argument("dataset: no samples");
    const int plen = prefix_len();
    const size_t alen = size_t(horizon) * action_dim;
    for (const Sample &s : samples) {
        if (int(s.prefix_ids.size()) != plen)
            throw std::invalid_argument("dataset: sample prefix length mismatch");
        if (s.prefix_ids[0] != vocab.bos_id)
            throw std::invalid_argument("dataset: sample prefix must start with BOS");
        for (size_t i = 1; i < s.prefix_ids.size(); ++i)
            if (!vocab.is_prefix(s.prefix_ids[i]))
                throw std::invalid_argument("dataset: non-prefix id inside a sample prefix");
        if (s.actions.size() != alen)
            throw std::invalid_argument("dataset: sample action length mismatch");
        for (double v : s.actions)
            if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite action value");
    }
}

void Dataset::save(std::ostream &os) const {
    os << "bdp-dataset-v1\n";
    os << "visual_len " << visual_len << "\n";
    os << "proprio_len " << proprio_len << "\n";
    os << "language_len " << language_len << "\n";
    os << "horizon " << horizon << "\n";
    os << "action_dim " << action_dim << "\n";
    os << "count " << samples.size() << "\n";
    for (const auto &kv : meta) os << "meta " << kv.first << " " << kv.second << "\n";
    os << "data\n";
    for (const Sample &s : samples) {
        for (size_t i = 0; i < s.prefix_ids.size(); ++i) {
            if (i) os << ',';
            os << s.prefix_ids[i];
        }
        for (double v : s.actions) os << ',' << fmt_double(v);
        os << "\n";
    }
}

Dataset Dataset::load(std::istream &is) {
    Dataset d;
    std::string line;
    if (!std::getline(is, line) || trim(line) != "bdp-dataset-v1")
        throw std::runtime_error("dataset: bad magic line");
    size_t count = 0;
    bool have_count = false;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line == "data") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "visual_len")
            ls >> d.visual_len;
        else if (key == "proprio_len")
            ls >> d.proprio_len;
        else if (key == "language_len")
            ls >> d.language_len;
        else if (key == "horizon")
            ls >> d.horizon;
        else if (key == "action_dim")
            ls >> d.action_dim;
        else if (key == "count") {
            ls >> count;
            have_count = true;
        } else if (key == "meta") {
            std::string mkey, mval;
            ls >> mkey;
            std::getline(ls, mval);
            d.meta.emplace_back(mkey, trim(mval));
        } else {
            throw std::runtime_error("dataset: unknown header key '" + key + "'");
        }
        if (!ls) throw std::runtime_error("dataset: malformed header line '" + line + "'");
    }
    if (!have_count) throw std::runtime_error("dataset: missing count");

    const int plen = d.prefix_len();
    const int alen = d.horizon * d.action_dim;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty()) continue;
        Sample s;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (int(cells.size()) != plen + alen)
            throw std::runtime_error("dataset: row with wrong field count");
        for (int i = 0; i < plen; ++i) s.prefix_ids.push_back(parse_int("row", cells[i]));
        for (int i = 0; i < alen; ++i) s.actions.push_back(parse_double("row", cells[plen + i]));
        d.samples.push_back(std::move(s));
    }
    if (d.samples.size() != count)
        throw std::runtime_error("dataset: row count does not match header count");
    return d;
}

void Dataset::save_file(const std::string &path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write dataset file: " + path);
    save(f);
}

Dataset Dataset::load_file(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open dataset file: " + path);
    return load(f);
}

namespace {

struct LayoutBundle {
    BlockLayout layout;
    AttnMask mask;
    std::vector<int> position_ids;
};

LayoutBundle build_layout(const TrainConfig &cfg, int prefix_len) {
    if (cfg.baseline == BaselineMode::full_diffusion) {
        BlockLayout layout =
            BlockLayout::plain(prefix_len, 1, cfg.block_count * cfg.block_len);
        return {layout, full_bidirectional_mask(layout), plain_position_ids(layout)};
    }
    if (cfg.baseline == BaselineMode::autoregressive) {
        BlockLayout layout = BlockLayout::plain(prefix_len, cfg.block_count, cfg.block_len);
        return {layout, ar_causal_mask(layout.total_len()), plain_position_ids(layout)};
    }
    if (cfg.forcing == ForcingMode::teacher) {
        BlockLayout layout = BlockLayout::teacher(prefix_len, cfg.block_count, cfg.block_len);
        TeacherForcingMask tf = teacher_forcing_mask(layout);
        return {layout, std::move(tf.mask), std::move(tf.position_ids)};
    }
    BlockLayout layout = BlockLayout::plain(prefix_len, cfg.block_count, cfg.block_len);
    return {layout, diffusion_forcing_mask(layout), plain_position_ids(layout)};
}

}  // namespace

Trainer::Trainer(TrainConfig config, Dataset data, BinTable bins)
    : config_(std::move(config)),
      data_(std::move(data)),
      bins_(std::move(bins)),
      layout_(BlockLayout::plain(1, 1, 1)) {
    config_.validate();
    data_.validate(vocab_);
    bins_.validate();
    if (data_.horizon != config_.horizon || data_.action_dim != config_.action_dim)
        throw std::invalid_argument("trainer: dataset chunk shape does not match config");

    LayoutBundle bundle = build_layout(config_, data_.prefix_len());
    layout_ = bundle.layout;
    mask_ = std::move(bundle.mask);
    position_ids_ = std::move(bundle.position_ids);

    Rng param_rng = Rng::substream(config_.seed, 0);
    state_.params = init_params(config_.model, param_rng);
    state_.adam_m = zeros_like(state_.params);
    state_.adam_v = zeros_like(state_.params);
    state_.rng = Rng::substream(config_.seed, 1);
    state_.step = 0;
}

Trainer::Trainer(TrainConfig config, Dataset data, BinTable bins, TrainState state)
    : Trainer(std::move(config), std::move(data), std::move(bins)) {
    state_ = std::move(state);
}

TrainingExample Trainer::make_training_example(const Sample &sample, Rng &rng,
                                               BuildInfo *info) const {
    ActionChunk chunk(config_.horizon, config_.action_dim);
    chunk.values = sample.actions;
    std::vector<int> action_tokens = encode_chunk(chunk, bins_, vocab_);
    if (int(action_tokens.size()) != layout_.action_len())
        throw std::invalid_argument("trainer: encoded action length does not match the layout");

    PrefixTokens prefix;
    prefix.ids = sample.prefix_ids;
    prefix.visual_len = data_.visual_len;
    prefix.proprio_len = data_.proprio_len;
    prefix.language_len = data_.language_len;

    const bool teacher =
        config_.baseline == BaselineMode::none && config_.forcing == ForcingMode::teacher;
    TokenSeq clean = assemble_sequence(
        prefix, action_tokens, teacher ? LayoutVariant::teacher_forcing : LayoutVariant::plain,
        vocab_);
    if (int(clean.ids.size()) != layout_.total_len())
        throw std::invalid_argument("trainer: assembled length does not match the layout");

    TrainingExample ex;
    ex.position_ids = position_ids_;
    ex.mask = mask_;

    if (config_.baseline == BaselineMode::autoregressive) {
        // next-token prediction over the action region, no corruption
        const int n = layout_.total_len();
        const int hd = layout_.action_len();
        ex.ids = clean.ids;
        ex.targets.assign(n, kIgnoreTarget);
        ex.weights.assign(n, 0.0);
        for (int r = layout_.action_begin() - 1; r < layout_.action_end() - 1; ++r) {
            ex.targets[r] = clean.ids[r + 1];
            ex.weights[r] = 1.0 / hd;
        }
        if (info) {
            info->timesteps.clear();
            info->mask_fraction = 0.0;
        }
        return ex;
    }

    std::vector<int> noisy = clean.ids;
    CorruptionRecord record = corrupt(noisy, layout_, vocab_, rng);
    LossTargets lt = loss_targets(clean.ids, layout_, record, config_.token_shift);

    // fold the per-block average into the 1/t weights
    int total_masked = 0;
    for (int b = 0; b < layout_.block_count; ++b) total_masked += record.masked_count(layout_, b);
    for (int r = 0; r < layout_.total_len(); ++r) {
        if (lt.weights[r] == 0.0) continue;
        int predicted = config_.token_shift ? r + 1 : r;
        int b = layout_.block_of(predicted);
        lt.weights[r] /= double(layout_.block_count) * record.masked_count(layout_, b);
    }

    ex.ids = std::move(noisy);
    ex.targets = std::move(lt.targets);
    ex.weights = std::move(lt.weights);
    if (info) {
        info->timesteps = record.timesteps;
        info->mask_fraction = double(total_masked) / layout_.action_len();
    }
    return ex;
}

StepStats Trainer::train_step() {
    auto t0 = std::chrono::steady_clock::now();

    std::vector<TrainingExample> batch;
    std::vector<BuildInfo> infos(config_.batch_size);
    batch.reserve(config_.batch_size);
    for (int i = 0; i < config_.batch_size; ++i) {
        const Sample &s = data_.samples[state_.rng.bits() % data_.samples.size()];
        batch.push_back(make_training_example(s, state_.rng, &infos[i]));
    }

    Params grad;
    double loss = loss_and_grad(state_.params, batch, grad, config_.threads);
    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train step " << state_.step << ": non-finite loss " << loss << "; timesteps:";
        for (const BuildInfo &info : infos) {
            msg << " [";
            for (size_t i = 0; i < info.timesteps.size(); ++i)
                msg << (i ? "," : "") << info.timesteps[i];
            msg << "]";
        }
        msg << "; mask fractions:";
        for (const BuildInfo &info : infos) msg << " " << info.mask_fraction;
        throw std::runtime_error(msg.str());
    }

    if (config_.grad_clip > 0.0) {
        double sq = 0.0;
        for_each_tensor(grad, [&](const std::string &, Mat &m) { sq += m.squaredNorm(); });
        const double norm = std::sqrt(sq);
        if (norm > config_.grad_clip) {
            const double scale = config_.grad_clip / norm;
            for_each_tensor(grad, [&](const std::string &, Mat &m) { m *= scale; });
        }
    }

    // Adam with bias correction, constant learning rate
    const double bc1 = 1.0 - std::pow(config_.beta1, double(state_.step + 1));
    const double bc2 = 1.0 - std::pow(config_.beta2, double(state_.step + 1));
    std::vector<Mat *> ps, gs, ms, vs;
    for_each_tensor(state_.params, [&](const std::string &, Mat &m) { ps.push_back(&m); });
    for_each_tensor(grad, [&](const std::string &, Mat &m) { gs.push_back(&m); });
    for_each_tensor(state_.adam_m, [&](const std::string &, Mat &m) { ms.push_back(&m); });
    for_each_tensor(state_.adam_v, [&](const std::string &, Mat &m) { vs.push_back(&m); });
    for (size_t t = 0; t < ps.size(); ++t) {
        double *p = ps[t]->data(), *g = gs[t]->data(), *m = ms[t]->data(), *v = vs[t]->data();
        const Eigen::Index size = ps[t]->size();
        for (Eigen::Index i = 0; i < size; ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            p[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.adam_eps);
        }
    }

    state_.step += 1;
    state_.last_loss = loss;

    StepStats stats;
    stats.step = state_.step;
    stats.loss = loss;
    double mf = 0.0;
    for (const BuildInfo &info : infos) mf += info.mask_fraction;
    stats.mask_fraction = mf / infos.size();
    stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

void Trainer::run(std::ostream *csv_log, const std::string &ckpt_dir) {
    if (csv_log && state_.step == 0) *csv_log << "step,loss,mask_fraction_mean,wall_ms\n";
    while (state_.step < config_.steps) {
        StepStats stats = train_step();
        if (csv_log) {
            *csv_log << stats.step << ',' << fmt_double(stats.loss) << ','
                     << fmt_double(stats.mask_fraction) << ',' << fmt_double(stats.wall_ms)
                     << '\n';
            csv_log->flush();
        }
        if (!ckpt_dir.empty() &&
            (state_.step % config_.ckpt_interval == 0 || state_.step == config_.steps))
            save_checkpoint(ckpt_dir);
    }
}

void Trainer::save_checkpoint(const std::string &dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    // tensors: params, then adam moments, in visitation order
    std::vector<std::pair<std::string, const Mat *>> tensors;
    for_each_tensor(state_.params,
                    [&](const std::string &n, const Mat &m) { tensors.emplace_back(n, &m); });
    for_each_tensor(state_.adam_m, [&](const std::string &n, const Mat &m) {
        tensors.emplace_back("adam_m." + n, &m);
    });
    for_each_tensor(state_.adam_v, [&](const std::string &n, const Mat &m) {
        tensors.emplace_back("adam_v." + n, &m);
    });

    std::ofstream blob(dir + "/params.bin", std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("cannot write checkpoint blob in " + dir);
    std::ofstream manifest(dir + "/manifest.txt", std::ios::trunc);
    if (!manifest) throw std::runtime_error("cannot write checkpoint manifest in " + dir);

    manifest << "format bdp-checkpoint-v1\n";
    manifest << "step " << state_.step << "\n";
    manifest << "last_loss " << fmt_double(state_.last_loss) << "\n";
    manifest << "rng " << state_.rng << "\n";
    std::ostringstream cfg_text;
    config_.save(cfg_text);
    std::istringstream cfg_lines(cfg_text.str());
    std::string line;
    while (std::getline(cfg_lines, line)) manifest << "cfg " << line << "\n";

    uint64_t offset = 0;
    for (const auto &[name, mat] : tensors) {
        manifest << "tensor " << name << " " << offset << " " << mat->rows() << " " << mat->cols()
                 << "\n";
        blob.write(reinterpret_cast<const char *>(mat->data()), std::streamsize(mat->size() * 8));
        offset += uint64_t(mat->size()) * 8;
    }
    if (!blob || !manifest) throw std::runtime_error("checkpoint write failed in " + dir);
    blob.close();
    manifest.close();

    std::ofstream bins(dir + "/bins.txt", std::ios::trunc);
    if (!bins) throw std::runtime_error("cannot write checkpoint bins in " + dir);
    bins_.save(bins);
}

Trainer::Loaded Trainer::load_checkpoint(const std::string &dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("cannot open checkpoint manifest in " + dir);

    Loaded out;
    std::string cfg_text;
    struct TensorEntry {
        std::string name;
        uint64_t offset;
        int rows, cols;
    };
    std::vector<TensorEntry> entries;
    int64_t step = 0;
    double last_loss = 0.0;
    Rng rng;
    bool format_ok = false, have_rng = false;

    std::string line;
    while (std::getline(manifest, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string v;
            ls >> v;
            if (v != "bdp-checkpoint-v1") throw std::runtime_error("checkpoint: unknown format");
            format_ok = true;
        } else if (key == "step") {
            ls >> step;
        } else if (key == "last_loss") {
            ls >> last_loss;
        } else if (key == "rng") {
            ls >> rng;
            have_rng = true;
        } else if (key == "cfg") {
            std::string rest;
            std::getline(ls, rest);
            cfg_text += trim(rest) + "\n";
        } else if (key == "tensor") {
            TensorEntry e;
            ls >> e.name >> e.offset >> e.rows >> e.cols;
            if (!ls) throw std::runtime_error("checkpoint: malformed tensor line");
            entries.push_back(e);
        } else if (!key.empty()) {
            throw std::runtime_error("checkpoint: unknown manifest key '" + key + "'");
        }
    }
    if (!format_ok || !have_rng) throw std::runtime_error("checkpoint: incomplete manifest");

    std::istringstream cfg_stream(cfg_text);
    out.config = TrainConfig::parse(cfg_stream);

    Rng throwaway(0);
    out.state.params = init_params(out.config.model, throwaway);
    out.state.adam_m = zeros_like(out.state.params);
    out.state.adam_v = zeros_like(out.state.params);
    out.state.step = step;
    out.state.last_loss = last_loss;
    out.state.rng = rng;

    std::map<std::string, Mat *> slots;
    for_each_tensor(out.state.params, [&](const std::string &n, Mat &m) { slots[n] = &m; });
    for_each_tensor(out.state.adam_m,
                    [&](const std::string &n, Mat &m) { slots["adam_m." + n] = &m; });
    for_each_tensor(out.state.adam_v,
                    [&](const std::string &n, Mat &m) { slots["adam_v." + n] = &m; });

    std::ifstream blob(dir + "/params.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("cannot open checkpoint blob in " + dir);
    blob.seekg(0, std::ios::end);
    const uint64_t blob_size = uint64_t(blob.tellg());

    uint64_t expected = 0;
    if (entries.size() != slots.size())
        throw std::runtime_error("checkpoint: tensor count does not match the model");
    for (const TensorEntry &e : entries) {
        auto it = slots.find(e.name);
        if (it == slots.end()) throw std::runtime_error("checkpoint: unexpected tensor " + e.name);
        Mat &m = *it->second;
        if (m.rows() != e.rows || m.cols() != e.cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
        const uint64_t bytes = uint64_t(m.size()) * 8;
        if (e.offset + bytes > blob_size)
            throw std::runtime_error("checkpoint: blob too short for " + e.name);
        blob.seekg(std::streamoff(e.offset));
        blob.read(reinterpret_cast<char *>(m.data()), std::streamsize(bytes));
        if (!blob) throw std::runtime_error("checkpoint: blob read failed for " + e.name);
        expected += bytes;
    }
    if (expected != blob_size)
        throw std::runtime_error("checkpoint: blob length does not match the manifest");

    out.bins = BinTable::load_file(dir + "/bins.txt");
    return out;
}

}  // namespace bdp
