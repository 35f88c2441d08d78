// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/workload.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ckptbench {

enum class StrategyKind { FilePerShard, FilePerProcess, SingleSharedFile, FixedChunkFragmentation };

std::string_view to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(std::string_view s);

struct AggregationStrategy {
    StrategyKind kind = StrategyKind::FilePerShard;
    std::uint64_t chunk_bytes = 512 * MiB;  // FixedChunkFragmentation only

    static AggregationStrategy file_per_shard() { return {StrategyKind::FilePerShard}; }
    static AggregationStrategy file_per_process() { return {StrategyKind::FilePerProcess}; }
    static AggregationStrategy single_shared_file() { return {StrategyKind::SingleSharedFile}; }
    static AggregationStrategy fixed_chunk_fragmentation(std::uint64_t chunk = 512 * MiB)
    {
        return {StrategyKind::FixedChunkFragmentation, chunk};
    }

    bool operator==(const AggregationStrategy& o) const
    {
        return kind == o.kind && (kind != StrategyKind::FixedChunkFragmentation || chunk_bytes == o.chunk_bytes);
    }
};

constexpr std::uint64_t kDefaultAlignment = 4096;

inline bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }
inline std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

struct PlacementEntry {
    std::uint64_t object_id = 0;
    std::uint32_t rank = 0;
    std::uint32_t shard = 0;
    ObjectKind kind = ObjectKind::Tensor;
    std::uint32_t part = 0;        // chunk index for fragmented objects
    std::uint32_t part_count = 1;
    std::uint64_t object_offset = 0;  // where this part starts inside the object
    std::string file_key;             // relative to the checkpoint version directory
    std::uint64_t offset_bytes = 0;
    std::uint64_t length_bytes = 0;
    std::uint64_t padded_length_bytes = 0;

    std::uint64_t end() const { return offset_bytes + padded_length_bytes; }
    bool operator==(const PlacementEntry&) const = default;
};

/// Where a rank's contiguous region of the shared file begins. Rank r cannot
/// know its base before ranks 0..r-1 have sized theirs; the dependency is kept
/// so the coordination cost can be charged to it.
struct RankRegion {
    std::uint32_t rank = 0;
    std::uint64_t base_offset = 0;
    std::uint64_t padded_total = 0;
    std::optional<std::uint32_t> depends_on;

    bool operator==(const RankRegion&) const = default;
};

struct LayoutPlan {
    AggregationStrategy strategy;
    std::uint64_t alignment_bytes = kDefaultAlignment;
    bool direct = false;
    std::vector<PlacementEntry> entries;
    std::size_t file_count = 0;
    std::map<std::string, std::uint64_t> per_file_total;
    std::vector<RankRegion> rank_regions;  // SingleSharedFile only

    std::vector<const PlacementEntry*> entries_of_rank(std::uint32_t rank) const;
    std::vector<std::string> files_of_rank(std::uint32_t rank) const;

    bool operator==(const LayoutPlan&) const = default;
};

/// Places every object of `workload`. Within a shard the metadata header
/// comes first, then the lean object, then tensors in workload order, so that
/// the header and lean object always form one contiguous span. In direct mode
/// every entry starts on an aligned offset and is padded to a multiple of the
/// alignment.
LayoutPlan plan_layout(const WorkloadSpec& workload,
                       const AggregationStrategy& strategy,
                       std::uint64_t alignment_bytes,
                       bool direct);

std::uint64_t total_padded_bytes(const LayoutPlan& plan);
std::uint64_t total_length_bytes(const LayoutPlan& plan);

std::string layout_to_json(const LayoutPlan& plan);
LayoutPlan layout_from_json(std::string_view text);

} // namespace ckptbench
