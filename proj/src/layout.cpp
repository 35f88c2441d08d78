// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/layout.hpp"

#include "ckptbench/error.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <set>

namespace ckptbench {

std::string_view to_string(StrategyKind kind)
{
    switch (kind) {
    case StrategyKind::FilePerShard: return "file-per-shard";
    case StrategyKind::FilePerProcess: return "file-per-process";
    case StrategyKind::SingleSharedFile: return "single-shared-file";
    case StrategyKind::FixedChunkFragmentation: return "fragmented-chunks";
    }
    return "file-per-shard";
}

StrategyKind strategy_kind_from_string(std::string_view s)
{
    if (s == "file-per-shard") return StrategyKind::FilePerShard;
    if (s == "file-per-process") return StrategyKind::FilePerProcess;
    if (s == "single-shared-file") return StrategyKind::SingleSharedFile;
    if (s == "fragmented-chunks" || s == "fixed-chunk-fragmentation") return StrategyKind::FixedChunkFragmentation;
    throw Error(ErrorCode::InvalidArgument, "unknown aggregation strategy '" + std::string(s) + "'");
}

std::vector<const PlacementEntry*> LayoutPlan::entries_of_rank(std::uint32_t rank) const
{
    std::vector<const PlacementEntry*> out;
    for (const auto& e : entries)
        if (e.rank == rank) out.push_back(&e);
    return out;
}

std::vector<std::string> LayoutPlan::files_of_rank(std::uint32_t rank) const
{
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& e : entries)
        if (e.rank == rank && seen.insert(e.file_key).second) out.push_back(e.file_key);
    return out;
}

namespace {

int kind_order(ObjectKind k)
{
    switch (k) {
    case ObjectKind::MetadataHeader: return 0;
    case ObjectKind::LeanObject: return 1;
    case ObjectKind::Tensor: return 2;
    }
    return 2;
}

std::string shard_file(std::string_view dir, std::uint32_t rank, std::uint32_t shard)
{
    return std::string(dir) + "/rank" + std::to_string(rank) + "-shard" + std::to_string(shard) + ".bin";
}

} // namespace

LayoutPlan plan_layout(const WorkloadSpec& workload,
                       const AggregationStrategy& strategy,
                       std::uint64_t alignment_bytes,
                       bool direct)
{
    require(is_power_of_two(alignment_bytes) && alignment_bytes >= 512, ErrorCode::InvalidAlignment,
            "alignment " + std::to_string(alignment_bytes) + " is not a power of two >= 512");
    require(!workload.objects.empty(), ErrorCode::EmptyWorkload, "workload has no objects");
    if (strategy.kind == StrategyKind::FixedChunkFragmentation) {
        require(strategy.chunk_bytes > 0, ErrorCode::InvalidArgument, "fragmentation chunk must be >= 1");
        require(!direct || strategy.chunk_bytes % alignment_bytes == 0, ErrorCode::InvalidArgument,
                "fragmentation chunk must be a multiple of the alignment in direct mode");
    }
    {
        std::set<std::uint64_t> ids;
        for (const auto& o : workload.objects) {
            require(o.size_bytes >= 1, ErrorCode::InvalidArgument, "object " + std::to_string(o.object_id) + " is empty");
            require(ids.insert(o.object_id).second, ErrorCode::InvalidArgument,
                    "duplicate object id " + std::to_string(o.object_id));
        }
    }

    auto pad = [&](std::uint64_t len) { return direct ? round_up(len, alignment_bytes) : len; };

    std::vector<const ObjectSpec*> order;
    order.reserve(workload.objects.size());
    for (const auto& o : workload.objects) order.push_back(&o);
    std::stable_sort(order.begin(), order.end(), [](const ObjectSpec* a, const ObjectSpec* b) {
        if (a->rank != b->rank) return a->rank < b->rank;
        if (a->shard_index != b->shard_index) return a->shard_index < b->shard_index;
        return kind_order(a->kind) < kind_order(b->kind);
    });

    LayoutPlan plan;
    plan.strategy = strategy;
    plan.alignment_bytes = alignment_bytes;
    plan.direct = direct;
    plan.entries.reserve(order.size());

    const std::string dir(to_string(strategy.kind));
    std::map<std::string, std::uint64_t> cursor;

    auto place = [&](const ObjectSpec& o, const std::string& key, std::uint64_t offset, std::uint64_t length,
                     std::uint32_t part, std::uint32_t parts, std::uint64_t object_offset) {
        PlacementEntry e;
        e.object_id = o.object_id;
        e.rank = o.rank;
        e.shard = o.shard_index;
        e.kind = o.kind;
        e.part = part;
        e.part_count = parts;
        e.object_offset = object_offset;
        e.file_key = key;
        e.offset_bytes = offset;
        e.length_bytes = length;
        e.padded_length_bytes = pad(length);
        plan.entries.push_back(std::move(e));
        return plan.entries.back().end();
    };
    auto append = [&](const ObjectSpec& o, const std::string& key) {
        auto& c = cursor[key];
        c = place(o, key, c, o.size_bytes, 0, 1, 0);
    };

    switch (strategy.kind) {
    case StrategyKind::FilePerShard:
        for (const auto* o : order) append(*o, shard_file(dir, o->rank, o->shard_index));
        break;

    case StrategyKind::FilePerProcess:
        for (const auto* o : order) append(*o, dir + "/rank" + std::to_string(o->rank) + ".bin");
        break;

    case StrategyKind::SingleSharedFile: {
        const std::string key = dir + "/shared.bin";
        std::map<std::uint32_t, std::uint64_t> rank_total;
        for (const auto* o : order) rank_total[o->rank] += pad(o->size_bytes);
        std::uint64_t base = 0;
        std::optional<std::uint32_t> prev;
        for (const auto& [rank, total] : rank_total) {
            plan.rank_regions.push_back(RankRegion{rank, base, total, prev});
            prev = rank;
            base = direct ? round_up(base + total, alignment_bytes) : base + total;
        }
        std::map<std::uint32_t, std::uint64_t> rank_cursor;
        for (const auto& region : plan.rank_regions) rank_cursor[region.rank] = region.base_offset;
        for (const auto* o : order) {
            auto& c = rank_cursor[o->rank];
            c = place(*o, key, c, o->size_bytes, 0, 1, 0);
        }
        break;
    }

    case StrategyKind::FixedChunkFragmentation:
        for (const auto* o : order) {
            if (o->kind != ObjectKind::Tensor) {
                append(*o, shard_file(dir, o->rank, o->shard_index));
                continue;
            }
            const std::uint64_t chunk = strategy.chunk_bytes;
            const auto parts = static_cast<std::uint32_t>((o->size_bytes + chunk - 1) / chunk);
            for (std::uint32_t k = 0; k < parts; ++k) {
                const std::uint64_t start = std::uint64_t{k} * chunk;
                const std::uint64_t len = std::min(chunk, o->size_bytes - start);
                const std::string key =
                    dir + "/obj" + std::to_string(o->object_id) + "/chunk" + std::to_string(k) + ".bin";
                place(*o, key, 0, len, k, parts, start);
            }
        }
        break;
    }

    for (const auto& e : plan.entries) {
        auto& total = plan.per_file_total[e.file_key];
        total = std::max(total, e.end());
    }
    plan.file_count = plan.per_file_total.size();
    return plan;
}

std::uint64_t total_padded_bytes(const LayoutPlan& plan)
{
    std::uint64_t total = 0;
    for (const auto& e : plan.entries) total += e.padded_length_bytes;
    return total;
}

std::uint64_t total_length_bytes(const LayoutPlan& plan)
{
    std::uint64_t total = 0;
    for (const auto& e : plan.entries) total += e.length_bytes;
    return total;
}

std::string layout_to_json(const LayoutPlan& plan)
{
    json::ordered j;
    j["strategy"] = std::string(to_string(plan.strategy.kind));
    j["chunk_bytes"] = plan.strategy.chunk_bytes;
    j["alignment_bytes"] = plan.alignment_bytes;
    j["direct"] = plan.direct;
    j["file_count"] = plan.file_count;
    auto& files = j["per_file_total"] = json::ordered::object();
    for (const auto& [k, v] : plan.per_file_total) files[k] = v;
    auto& regions = j["rank_regions"] = json::ordered::array();
    for (const auto& r : plan.rank_regions) {
        json::ordered jr;
        jr["rank"] = r.rank;
        jr["base_offset"] = r.base_offset;
        jr["padded_total"] = r.padded_total;
        jr["depends_on"] = r.depends_on ? json::ordered(*r.depends_on) : json::ordered(nullptr);
        regions.push_back(std::move(jr));
    }
    auto& entries = j["entries"] = json::ordered::array();
    for (const auto& e : plan.entries) {
        json::ordered je;
        je["object_id"] = e.object_id;
        je["rank"] = e.rank;
        je["shard"] = e.shard;
        je["kind"] = std::string(to_string(e.kind));
        je["part"] = e.part;
        je["part_count"] = e.part_count;
        je["object_offset"] = e.object_offset;
        je["file_key"] = e.file_key;
        je["offset"] = e.offset_bytes;
        je["length"] = e.length_bytes;
        je["padded_length"] = e.padded_length_bytes;
        entries.push_back(std::move(je));
    }
    return j.dump();
}

LayoutPlan layout_from_json(std::string_view text)
{
    const auto j = json::parse_or_throw(text, ErrorCode::SchemaMismatch, "layout plan");
    try {
        LayoutPlan plan;
        plan.strategy.kind = strategy_kind_from_string(j.at("strategy").get<std::string>());
        plan.strategy.chunk_bytes = j.at("chunk_bytes").get<std::uint64_t>();
        plan.alignment_bytes = j.at("alignment_bytes").get<std::uint64_t>();
        plan.direct = j.at("direct").get<bool>();
        plan.file_count = j.at("file_count").get<std::size_t>();
        for (const auto& [k, v] : j.at("per_file_total").items()) plan.per_file_total[k] = v.get<std::uint64_t>();
        for (const auto& jr : j.at("rank_regions")) {
            RankRegion r;
            r.rank = jr.at("rank").get<std::uint32_t>();
            r.base_offset = jr.at("base_offset").get<std::uint64_t>();
            r.padded_total = jr.at("padded_total").get<std::uint64_t>();
            if (!jr.at("depends_on").is_null()) r.depends_on = jr.at("depends_on").get<std::uint32_t>();
            plan.rank_regions.push_back(r);
        }
        for (const auto& je : j.at("entries")) {
            PlacementEntry e;
            e.object_id = je.at("object_id").get<std::uint64_t>();
            e.rank = je.at("rank").get<std::uint32_t>();
            e.shard = je.at("shard").get<std::uint32_t>();
            e.kind = object_kind_from_string(je.at("kind").get<std::string>());
            e.part = je.at("part").get<std::uint32_t>();
            e.part_count = je.at("part_count").get<std::uint32_t>();
            e.object_offset = je.at("object_offset").get<std::uint64_t>();
            e.file_key = je.at("file_key").get<std::string>();
            e.offset_bytes = je.at("offset").get<std::uint64_t>();
            e.length_bytes = je.at("length").get<std::uint64_t>();
            e.padded_length_bytes = je.at("padded_length").get<std::uint64_t>();
            plan.entries.push_back(std::move(e));
        }
        return plan;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaMismatch, std::string("layout plan: ") + ex.what());
    }
}

} // namespace ckptbench
