// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/workload.hpp"

#include <random>

namespace oracle {

struct RandomWorkloadLimits {
    std::uint32_t max_ranks = 4;
    std::uint32_t max_shards = 4;
    std::uint32_t max_tensors = 6;
    std::uint64_t max_tensor_bytes = 3 * ckptbench::MiB;
};

/// Every shard gets a header, a lean object and 0..max_tensors tensors with
/// sizes drawn log-uniformly, so odd and sub-block sizes are common.
inline ckptbench::WorkloadSpec random_workload(std::mt19937_64& rng, const RandomWorkloadLimits& lim = {})
{
    using namespace ckptbench;
    auto uniform = [&](std::uint64_t lo, std::uint64_t hi) { return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng); };
    auto size = [&](std::uint64_t max) {
        const auto bits = uniform(0, 63 - static_cast<std::uint64_t>(__builtin_clzll(max)));
        return std::min<std::uint64_t>(max, uniform(1, std::uint64_t{1} << bits) + uniform(0, 7));
    };

    WorkloadSpec ws;
    ws.name = "random";
    ws.num_ranks = static_cast<std::uint32_t>(uniform(1, lim.max_ranks));
    ws.shards_per_rank = static_cast<std::uint32_t>(uniform(1, lim.max_shards));
    ws.master_seed = rng();
    ws.provenance = "synthetic";
    std::uint64_t id = 0;
    for (std::uint32_t r = 0; r < ws.num_ranks; ++r) {
        std::uint64_t index = 0;
        for (std::uint32_t s = 0; s < ws.shards_per_rank; ++s) {
            auto push = [&](ObjectKind k, std::uint64_t bytes) {
                ws.objects.push_back(ObjectSpec{id++, r, s, k, bytes, derive_seed(ws.master_seed, r, index++)});
            };
            // Tensors first in workload order; the planner must still put the
            // header and lean object at the head of the shard.
            const auto tensors = uniform(0, lim.max_tensors);
            for (std::uint64_t t = 0; t < tensors; ++t) push(ObjectKind::Tensor, size(lim.max_tensor_bytes));
            push(ObjectKind::LeanObject, size(64 * KiB));
            push(ObjectKind::MetadataHeader, size(4 * KiB));
        }
    }
    return ws;
}

} // namespace oracle
