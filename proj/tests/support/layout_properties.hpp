// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/layout.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

/// Expected data file count of `plan` for `ws`, from first principles.
inline std::size_t expected_file_count(const ckptbench::WorkloadSpec& ws, const ckptbench::AggregationStrategy& s)
{
    using namespace ckptbench;
    std::set<std::uint32_t> ranks;
    std::set<std::pair<std::uint32_t, std::uint32_t>> shards, shards_with_meta;
    std::size_t chunks = 0;
    for (const auto& o : ws.objects) {
        ranks.insert(o.rank);
        shards.insert({o.rank, o.shard_index});
        if (o.kind != ObjectKind::Tensor)
            shards_with_meta.insert({o.rank, o.shard_index});
        else
            chunks += (o.size_bytes + s.chunk_bytes - 1) / s.chunk_bytes;
    }
    switch (s.kind) {
    case StrategyKind::FilePerShard: return shards.size();
    case StrategyKind::FilePerProcess: return ranks.size();
    case StrategyKind::SingleSharedFile: return 1;
    case StrategyKind::FixedChunkFragmentation: return shards_with_meta.size() + chunks;
    }
    return 0;
}

/// Checks every layout invariant; returns one message per violation.
inline std::vector<std::string> layout_violations(const ckptbench::WorkloadSpec& ws, const ckptbench::LayoutPlan& plan)
{
    using namespace ckptbench;
    std::vector<std::string> v;
    const std::uint64_t a = plan.alignment_bytes;

    // Non-overlap within each file.
    std::map<std::string, std::vector<const PlacementEntry*>> by_file;
    for (const auto& e : plan.entries) by_file[e.file_key].push_back(&e);
    for (auto& [file, es] : by_file) {
        std::sort(es.begin(), es.end(), [](auto* x, auto* y) { return x->offset_bytes < y->offset_bytes; });
        for (std::size_t i = 1; i < es.size(); ++i)
            if (es[i - 1]->offset_bytes + es[i - 1]->padded_length_bytes > es[i]->offset_bytes)
                v.push_back("overlap in " + file + " at " + std::to_string(es[i]->offset_bytes));
        std::uint64_t end = 0;
        for (auto* e : es) end = std::max(end, e->offset_bytes + e->padded_length_bytes);
        auto it = plan.per_file_total.find(file);
        if (it == plan.per_file_total.end() || it->second != end) v.push_back("per_file_total mismatch for " + file);
    }

    // Alignment divisibility and padding.
    std::uint64_t pad_total = 0;
    for (const auto& e : plan.entries) {
        if (e.padded_length_bytes < e.length_bytes) v.push_back("padding shrinks object " + std::to_string(e.object_id));
        pad_total += e.padded_length_bytes - e.length_bytes;
        if (plan.direct) {
            if (e.offset_bytes % a) v.push_back("unaligned offset of object " + std::to_string(e.object_id));
            if (e.padded_length_bytes % a) v.push_back("unaligned length of object " + std::to_string(e.object_id));
            if (e.padded_length_bytes - e.length_bytes >= a) v.push_back("over-padded object " + std::to_string(e.object_id));
        } else if (e.padded_length_bytes != e.length_bytes) {
            v.push_back("buffered entry padded: object " + std::to_string(e.object_id));
        }
    }
    if (pad_total > plan.entries.size() * (a - 1)) v.push_back("padding bound exceeded");

    // File-count closed form.
    if (plan.file_count != expected_file_count(ws, plan.strategy) || plan.file_count != by_file.size())
        v.push_back("file count " + std::to_string(plan.file_count) + " != " +
                    std::to_string(expected_file_count(ws, plan.strategy)));

    // Every object covered exactly once, parts in order.
    std::map<std::uint64_t, std::vector<const PlacementEntry*>> parts;
    for (const auto& e : plan.entries) parts[e.object_id].push_back(&e);
    if (parts.size() != ws.objects.size()) v.push_back("placed object count differs");
    for (const auto& o : ws.objects) {
        auto it = parts.find(o.object_id);
        if (it == parts.end()) continue;
        std::uint64_t covered = 0;
        for (std::size_t k = 0; k < it->second.size(); ++k) {
            const auto* e = it->second[k];
            if (e->object_offset != covered || e->part != k || e->part_count != it->second.size() || e->rank != o.rank)
                v.push_back("bad part sequence for object " + std::to_string(o.object_id));
            covered += e->length_bytes;
        }
        if (covered != o.size_bytes) v.push_back("object " + std::to_string(o.object_id) + " not fully placed");
    }

    // Header then lean object, adjacent, at the head of each shard's range in
    // its file.
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<const PlacementEntry*>> shard_entries;
    for (const auto& e : plan.entries) shard_entries[{e.rank, e.shard}].push_back(&e);
    for (const auto& [key, es] : shard_entries) {
        const PlacementEntry* header = nullptr;
        const PlacementEntry* lean = nullptr;
        for (auto* e : es) {
            if (e->kind == ObjectKind::MetadataHeader) header = e;
            if (e->kind == ObjectKind::LeanObject) lean = e;
        }
        if (!header || !lean) continue;
        if (header->file_key != lean->file_key || header->end() != lean->offset_bytes)
            v.push_back("header and lean object of a shard are not adjacent");
        for (auto* e : es)
            if (e->file_key == header->file_key && e->offset_bytes < header->offset_bytes)
                v.push_back("shard data precedes its header");
    }

    // Shared file: rank regions are disjoint and ordered, and each covers its rank's entries.
    if (plan.strategy.kind == StrategyKind::SingleSharedFile) {
        std::uint64_t prev_end = 0;
        for (const auto& r : plan.rank_regions) {
            if (r.base_offset < prev_end) v.push_back("rank regions overlap");
            if (plan.direct && r.base_offset % a) v.push_back("unaligned rank region");
            prev_end = r.base_offset + r.padded_total;
            for (const auto& e : plan.entries)
                if (e.rank == r.rank && (e.offset_bytes < r.base_offset || e.end() > prev_end))
                    v.push_back("entry outside its rank region");
        }
    }
    return v;
}

} // namespace oracle
