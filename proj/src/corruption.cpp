// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#include "bdp/corruption.hpp"

#include <stdexcept>

namespace bdp {

std::vector<double> sample_timesteps(int block_count, Rng &rng) {
    std::vector<double> t(block_count);
    for (double &v : t) v = kTimestepFloor + rng.uniform() * (1.0 - kTimestepFloor);
    return t;
}

CorruptionRecord corrupt(std::vector<int> &ids, const BlockLayout &layout,
                         const std::vector<double> &timesteps, const Vocab &vocab, Rng &rng) {
    layout.validate();
    if (int(ids.size()) != layout.total_len())
        throw std::invalid_argument("corrupt: sequence length does not match layout");
    if (int(timesteps.size()) != layout.block_count)
        throw std::invalid_argument("corrupt: need one timestep per block");
    for (double t : timesteps)
        if (!(t >= kTimestepFloor && t <= 1.0))
            throw std::invalid_argument("corrupt: timestep outside (floor, 1]");

    CorruptionRecord record;
    record.timesteps = timesteps;
    record.masked.assign(ids.size(), 0);
    record.loss_weights.assign(ids.size(), 0.0);
    record.root_seed = rng.bits();

    for (int b = 0; b < layout.block_count; ++b) {
        Rng block_rng = Rng::substream(record.root_seed, uint64_t(b));
        int begin = layout.action_begin() + b * layout.block_len;
        for (int i = begin; i < begin + layout.block_len; ++i) {
            if (block_rng.uniform() < timesteps[b]) {
                record.masked[i] = 1;
                record.loss_weights[i] = 1.0 / timesteps[b];
                ids[i] = vocab.mask_id;
            }
        }
    }
    return record;
}

CorruptionRecord corrupt(std::vector<int> &ids, const BlockLayout &layout, const Vocab &vocab,
                         Rng &rng) {
    std::vector<double> t = sample_timesteps(layout.block_count, rng);
    return corrupt(ids, layout, t, vocab, rng);
}

}  // namespace bdp
