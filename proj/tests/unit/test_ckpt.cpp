// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/ckpt.hpp"

#include "oracle.hpp"
#include "random_workload.hpp"

#include <doctest.h>

#include <fstream>

using namespace ckptbench;
namespace fs = std::filesystem;

namespace {

ErrorCode error_of(auto&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::RankFailure;
}

std::vector<Backend> backends()
{
    if (ring_supported()) return {Backend::Blocking, Backend::Ring};
    MESSAGE("io_uring unavailable; ring backend cases skipped");
    return {Backend::Blocking};
}

EngineConfig engine(Backend b, bool direct, std::uint32_t qd = 16)
{
    EngineConfig c;
    c.backend = b;
    c.direct = direct;
    c.queue_depth = qd;
    return c;
}

AggregationStrategy strategy_of(StrategyKind k, std::uint64_t chunk = 64 * KiB)
{
    return k == StrategyKind::FixedChunkFragmentation ? AggregationStrategy::fixed_chunk_fragmentation(chunk)
                                                      : AggregationStrategy{k};
}

constexpr StrategyKind kAllStrategies[] = {StrategyKind::FilePerShard, StrategyKind::FilePerProcess,
                                           StrategyKind::SingleSharedFile, StrategyKind::FixedChunkFragmentation};

bool direct_supported(const fs::path& dir)
{
    try {
        open_file(dir / ".probe", OpenMode::WriteCreate, engine(Backend::Blocking, true));
        fs::remove(dir / ".probe");
        return true;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::DirectUnsupported) throw;
        return false;
    }
}

/// Compares every placed byte range with the oracle stream and checks that
/// direct-mode padding is zero.
std::size_t disk_mismatches(const WorkloadSpec& ws, const LayoutPlan& plan, const fs::path& dir)
{
    std::map<std::uint64_t, const ObjectSpec*> by_id;
    for (const auto& o : ws.objects) by_id[o.object_id] = &o;
    std::map<std::string, std::vector<unsigned char>> files;
    std::size_t bad = 0;
    for (const auto& e : plan.entries) {
        auto& data = files.try_emplace(e.file_key, oracle::read_all(dir / e.file_key)).first->second;
        if (data.size() < e.offset_bytes + e.padded_length_bytes) {
            ++bad;
            continue;
        }
        const auto* o = by_id.at(e.object_id);
        const auto expect = oracle::object_bytes(o->content_seed, o->size_bytes);
        if (!std::equal(expect.begin() + static_cast<long>(e.object_offset),
                        expect.begin() + static_cast<long>(e.object_offset + e.length_bytes),
                        data.begin() + static_cast<long>(e.offset_bytes)))
            ++bad;
        for (std::uint64_t i = e.length_bytes; i < e.padded_length_bytes; ++i)
            if (data[e.offset_bytes + i] != 0) {
                ++bad;
                break;
            }
    }
    return bad;
}

struct RoundTrip {
    CheckpointResult ck;
    std::vector<RankRestore> restored;
};

RoundTrip round_trip(const WorkloadSpec& ws, const AggregationStrategy& s, const EngineConfig& cfg, EmulationMode mode,
                     const RestoreOptions& ropt, const fs::path& dir)
{
    const auto plan = plan_layout(ws, s, 4096, cfg.direct);
    RoundTrip rt;
    rt.ck = checkpoint(ws, plan, dir, cfg, mode);
    rt.restored = restore(dir, cfg, ropt);
    return rt;
}

std::size_t failures(const std::vector<RankRestore>& rs)
{
    std::size_t n = 0;
    for (const auto& r : rs) n += r.objects.size() - r.passed();
    return n;
}

std::size_t count(const std::vector<RankRestore>& rs)
{
    std::size_t n = 0;
    for (const auto& r : rs) n += r.objects.size();
    return n;
}

std::map<std::uint64_t, ObjectStatus> statuses(const std::vector<ObjectResult>& objs)
{
    std::map<std::uint64_t, ObjectStatus> out;
    for (const auto& o : objs) out[o.object_id] = o.status;
    return out;
}

} // namespace

TEST_CASE("checkpoint bytes on disk match the oracle and restore verifies")
{
    oracle::TempDir tmp("ckpt");
    const bool direct_ok = direct_supported(tmp.path());
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 3; ++trial) {
        const auto ws = oracle::random_workload(rng, {2, 2, 4, 300 * KiB});
        for (auto kind : kAllStrategies)
            for (bool direct : {false, true}) {
                if (direct && !direct_ok) continue;
                for (Backend be : backends())
                    for (auto mode : {EmulationMode::Batched, EmulationMode::PerObjectImmediate, EmulationMode::FragmentedChunks}) {
                        if (mode == EmulationMode::FragmentedChunks && kind != StrategyKind::FixedChunkFragmentation) continue;
                        CAPTURE(to_string(kind));
                        CAPTURE(direct);
                        CAPTURE(to_string(be));
                        CAPTURE(to_string(mode));
                        const auto cfg = engine(be, direct, 4);
                        const auto dir = tmp / "v";
                        const auto plan = plan_layout(ws, strategy_of(kind), 4096, direct);
                        const auto ck = checkpoint(ws, plan, dir, cfg, mode, 3);
                        CHECK(disk_mismatches(ws, plan, dir) == 0);
                        CHECK(ck.manifest.checkpoint_version == 3);
                        for (const auto& e : ck.manifest.entries) {
                            const auto& o = ws.objects[e.object_id];
                            CHECK(e.checksum == oracle::object_checksum(o.content_seed, o.size_bytes));
                        }
                        for (auto alloc : {AllocMode::Pooled, AllocMode::PerObject}) {
                            RestoreOptions ropt;
                            ropt.alloc = alloc;
                            ropt.mode = mode == EmulationMode::Batched ? mode : EmulationMode::PerObjectImmediate;
                            ropt.pool_region_bytes = 128 * KiB;
                            ropt.pool_regions = 3;
                            const auto rs = restore(dir, cfg, ropt);
                            CHECK(count(rs) == ws.objects.size());
                            CHECK(failures(rs) == 0);
                        }
                        const auto v = verify_checkpoint(dir);
                        CHECK(v.usable);
                        CHECK(v.ok());
                        CHECK(v.objects.size() == ws.objects.size());
                    }
            }
    }
}

TEST_CASE("write requests follow the schedule: one per shard head, one per tensor part")
{
    oracle::TempDir tmp("sched");
    std::mt19937_64 rng(5);
    const auto ws = oracle::random_workload(rng);
    for (auto kind : kAllStrategies) {
        const auto plan = plan_layout(ws, strategy_of(kind, 128 * KiB), 4096, false);
        for (std::uint32_t r = 0; r < ws.num_ranks; ++r) {
            const auto sched = build_write_schedule(plan, r);
            std::size_t tensor_parts = 0;
            for (const auto& e : plan.entries) tensor_parts += e.rank == r && e.kind == ObjectKind::Tensor;
            CHECK(sched.tensor_requests() == tensor_parts);
            CHECK(sched.requests.size() == tensor_parts + ws.shards_per_rank);
            for (const auto& q : sched.requests)
                if (!q.tensor_data) CHECK(q.object_ids.size() == 2);
        }
        const auto ck = checkpoint(ws, plan, tmp / "v", engine(Backend::Blocking, false), EmulationMode::Batched);
        for (const auto& rc : ck.ranks) {
            const auto sched = build_write_schedule(plan, rc.rank);
            CHECK(rc.stats.write_ops == sched.requests.size());
            CHECK(rc.stats.tensor_write_ops == sched.tensor_requests());
            CHECK(rc.stats.bytes_written == ws.total_bytes(rc.rank));
        }
    }
}

TEST_CASE("synthetic batched schedule: one tensor request per chunk")
{
    const auto ws = generate_synthetic(8 * GiB, 64 * MiB, 2, 42);
    const auto plan = plan_layout(ws, AggregationStrategy::single_shared_file(), 4096, true);
    for (std::uint32_t r = 0; r < 2; ++r) CHECK(build_write_schedule(plan, r).tensor_requests() == 128);
}

TEST_CASE("per-object restore reads: manifest, one per shard, one per tensor")
{
    oracle::TempDir tmp("reads");
    std::mt19937_64 rng(11);
    const auto ws = oracle::random_workload(rng, {3, 4, 5, 200 * KiB});
    const auto cfg = engine(Backend::Blocking, false);
    RestoreOptions ropt;
    ropt.mode = EmulationMode::PerObjectImmediate;
    for (auto kind : {StrategyKind::FilePerShard, StrategyKind::FilePerProcess, StrategyKind::SingleSharedFile}) {
        const auto rt = round_trip(ws, strategy_of(kind), cfg, EmulationMode::PerObjectImmediate, ropt, tmp / "v");
        for (const auto& rr : rt.restored) {
            std::size_t tensors = 0;
            for (const auto& o : ws.objects) tensors += o.rank == rr.rank && o.kind == ObjectKind::Tensor;
            CHECK(rr.stats.read_ops == 1 + ws.shards_per_rank + tensors);
            CHECK(rr.stats.tensor_read_ops == tensors);
            CHECK(rr.ok());
        }
    }
}

TEST_CASE("batched restore coalesces a contiguous file into region-sized reads")
{
    oracle::TempDir tmp("coalesce");
    const auto ws = generate_synthetic(4 * MiB, 64 * KiB, 1, 3);
    const auto cfg = engine(Backend::Blocking, false);
    RestoreOptions ropt;
    ropt.pool_region_bytes = MiB;
    ropt.pool_regions = 2;
    const auto rt = round_trip(ws, AggregationStrategy::file_per_process(), cfg, EmulationMode::Batched, ropt, tmp / "v");
    REQUIRE(rt.restored.size() == 1);
    const auto& rr = rt.restored[0];
    CHECK(rr.ok());
    CHECK(rr.pool_region_bytes == MiB);
    CHECK(rr.stats.tensor_read_ops == 4);
    CHECK(rr.stats.read_ops == 1 + 1 + 4);
    CHECK(rr.stats.allocations == 2);
}

TEST_CASE("allocation modes: one buffer per object versus the warmed pool")
{
    oracle::TempDir tmp("alloc");
    const auto ws = generate_synthetic(98 * 16 * KiB, 16 * KiB, 1, 9);
    REQUIRE(ws.objects.size() == 100);
    const auto cfg = engine(Backend::Blocking, false);
    const auto plan = plan_layout(ws, AggregationStrategy::file_per_shard(), 4096, false);
    checkpoint(ws, plan, tmp / "v", cfg, EmulationMode::Batched);
    for (auto mode : {EmulationMode::Batched, EmulationMode::PerObjectImmediate}) {
        RestoreOptions per_object{AllocMode::PerObject, mode, 256 * KiB, 4};
        RestoreOptions pooled{AllocMode::Pooled, mode, 256 * KiB, 4};
        const auto a = restore_rank(tmp / "v", 0, cfg, per_object);
        const auto b = restore_rank(tmp / "v", 0, cfg, pooled);
        CHECK(a.stats.allocations == 100);
        CHECK(b.stats.allocations <= b.pool_regions);
        CHECK(b.pool_regions == 4);
        CHECK(a.objects == b.objects);
        CHECK(a.ok());
    }
}

TEST_CASE("a checkpoint writer can write several versions")
{
    oracle::TempDir tmp("versions");
    const auto ws = generate_synthetic(256 * KiB, 64 * KiB, 1, 1);
    const auto plan = plan_layout(ws, AggregationStrategy::file_per_process(), 4096, false);
    const auto cfg = engine(Backend::Blocking, false);
    CheckpointWriter w(ws, plan, 0, cfg, EmulationMode::Batched);
    for (std::uint64_t v = 0; v < 2; ++v) {
        const auto dir = version_dir(tmp.path(), v);
        CHECK(dir.filename() == "ckpt-" + std::to_string(v));
        prepare_version_dir(plan, dir);
        const auto rc = w.write(dir);
        write_manifest_fragment(dir, 0, rc.entries);
        commit_manifest(dir, ws, plan, v);
        CHECK(verify_checkpoint(dir).ok());
        CHECK(rc.stats.write_ops == w.schedule().requests.size());
    }
}

TEST_CASE("prepare_version_dir clears stale content")
{
    oracle::TempDir tmp("prepare");
    const auto ws = generate_synthetic(64 * KiB, 16 * KiB, 2, 1);
    const auto plan = plan_layout(ws, AggregationStrategy::single_shared_file(), 4096, false);
    checkpoint(ws, plan, tmp / "v", engine(Backend::Blocking, false), EmulationMode::Batched);
    { std::ofstream(tmp / "v" / "stale.txt") << "x"; }
    prepare_version_dir(plan, tmp / "v");
    CHECK_FALSE(fs::exists(tmp / "v" / "stale.txt"));
    CHECK_FALSE(fs::exists(tmp / "v" / "manifest.json"));
    CHECK(fs::file_size(tmp / "v" / "single-shared-file" / "shared.bin") == 0);
}

static std::vector<RestoreOptions> all_restore_options()
{
    std::vector<RestoreOptions> out;
    for (auto mode : {EmulationMode::Batched, EmulationMode::PerObjectImmediate})
        for (auto alloc : {AllocMode::Pooled, AllocMode::PerObject}) out.push_back(RestoreOptions{alloc, mode, 128 * KiB, 2});
    return out;
}

const WorkloadSpec kFaultWorkload = generate_synthetic(8 * 64 * KiB, 64 * KiB, 1, 21);

TEST_CASE("a flipped bit fails exactly the object that holds it")
{
    oracle::TempDir tmp("bitflip");
    const auto cfg = engine(Backend::Blocking, false);
    const auto plan = plan_layout(kFaultWorkload, AggregationStrategy::file_per_process(), 4096, false);
    checkpoint(kFaultWorkload, plan, tmp / "v", cfg, EmulationMode::Batched);
    const auto& victim = plan.entries[5];
    {
        std::fstream f(tmp / "v" / victim.file_key, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(static_cast<long>(victim.offset_bytes + 100));
        char c = 0;
        f.get(c);
        f.seekp(static_cast<long>(victim.offset_bytes + 100));
        f.put(static_cast<char>(c ^ 0x10));
    }
    const auto v = verify_checkpoint(tmp / "v");
    CHECK(v.usable);
    for (const auto& ropt : all_restore_options()) {
        CAPTURE(to_string(ropt.mode));
        CAPTURE(to_string(ropt.alloc));
        const auto rr = restore_rank(tmp / "v", 0, cfg, ropt);
        for (const auto& [id, st] : statuses(rr.objects))
            CHECK(st == (id == victim.object_id ? ObjectStatus::ChecksumMismatch : ObjectStatus::Pass));
        CHECK(statuses(v.objects) == statuses(rr.objects));
    }
}

TEST_CASE("a truncated file fails the objects past the cut")
{
    oracle::TempDir tmp("truncate");
    const auto cfg = engine(Backend::Blocking, false);
    const auto plan = plan_layout(kFaultWorkload, AggregationStrategy::file_per_process(), 4096, false);
    checkpoint(kFaultWorkload, plan, tmp / "v", cfg, EmulationMode::Batched);
    const auto& cut_at = plan.entries[6];
    fs::resize_file(tmp / "v" / cut_at.file_key, cut_at.offset_bytes + 10);
    const auto v = verify_checkpoint(tmp / "v");
    CHECK(v.failed() == plan.entries.size() - 6);
    for (const auto& ropt : all_restore_options()) {
        CAPTURE(to_string(ropt.mode));
        CAPTURE(to_string(ropt.alloc));
        const auto rr = restore_rank(tmp / "v", 0, cfg, ropt);
        const auto st = statuses(rr.objects);
        for (const auto& e : plan.entries) {
            CAPTURE(e.object_id);
            CHECK(st.at(e.object_id) == (e.end() <= cut_at.offset_bytes ? ObjectStatus::Pass : ObjectStatus::ReadError));
        }
    }
}

TEST_CASE("a missing chunk file fails only its object")
{
    oracle::TempDir tmp("missing");
    const auto cfg = engine(Backend::Blocking, false);
    const auto plan = plan_layout(kFaultWorkload, AggregationStrategy::fixed_chunk_fragmentation(32 * KiB), 4096, false);
    checkpoint(kFaultWorkload, plan, tmp / "v", cfg, EmulationMode::FragmentedChunks);
    const PlacementEntry* gone = nullptr;
    for (const auto& e : plan.entries)
        if (e.kind == ObjectKind::Tensor && e.part == 1) gone = &e;
    REQUIRE(gone);
    fs::remove(tmp / "v" / gone->file_key);
    const auto v = verify_checkpoint(tmp / "v");
    for (const auto& ropt : all_restore_options()) {
        CAPTURE(to_string(ropt.mode));
        CAPTURE(to_string(ropt.alloc));
        const auto rr = restore_rank(tmp / "v", 0, cfg, ropt);
        for (const auto& [id, st] : statuses(rr.objects))
            CHECK(st == (id == gone->object_id ? ObjectStatus::MissingFile : ObjectStatus::Pass));
        CHECK(statuses(v.objects) == statuses(rr.objects));
    }
}

TEST_CASE("no manifest, no usable checkpoint")
{
    oracle::TempDir tmp("commit");
    const auto ws = generate_synthetic(256 * KiB, 64 * KiB, 2, 4);
    const auto plan = plan_layout(ws, AggregationStrategy::file_per_shard(), 4096, false);
    const auto cfg = engine(Backend::Blocking, false);
    struct Crash {};
    CHECK_THROWS_AS(checkpoint(ws, plan, tmp / "v", cfg, EmulationMode::Batched, 0, [] { throw Crash{}; }), Crash);
    CHECK(disk_mismatches(ws, plan, tmp / "v") == 0);
    const auto v = verify_checkpoint(tmp / "v");
    CHECK_FALSE(v.usable);
    CHECK_FALSE(v.ok());
    CHECK_FALSE(v.reason.empty());
    CHECK(error_of([&] { restore_rank(tmp / "v", 0, cfg, {}); }) == ErrorCode::MissingFile);

    { std::ofstream(tmp / "v" / "manifest.json") << "{\"schema_version\": \"ckptbench.manifest/1\", \"entr"; }
    CHECK_FALSE(verify_checkpoint(tmp / "v").usable);
    CHECK(error_of([&] { restore_rank(tmp / "v", 0, cfg, {}); }) == ErrorCode::ShortManifest);
}

TEST_CASE("restore refuses an engine that disagrees with the checkpoint's direct mode")
{
    oracle::TempDir tmp("mismatch");
    if (!direct_supported(tmp.path())) return;
    const auto ws = generate_synthetic(64 * KiB, 16 * KiB, 1, 4);
    const auto plan = plan_layout(ws, AggregationStrategy::file_per_shard(), 4096, false);
    checkpoint(ws, plan, tmp / "v", engine(Backend::Blocking, false), EmulationMode::Batched);
    CHECK(error_of([&] { restore_rank(tmp / "v", 0, engine(Backend::Blocking, true), {}); }) == ErrorCode::InvalidArgument);
    CHECK(error_of([&] { CheckpointWriter(ws, plan, 0, engine(Backend::Blocking, true), EmulationMode::Batched); }) ==
          ErrorCode::InvalidArgument);
    CHECK(error_of([&] { CheckpointWriter(ws, plan, 0, engine(Backend::Blocking, false), EmulationMode::FragmentedChunks); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("drop_page_cache leaves data intact")
{
    oracle::TempDir tmp("dropcache");
    const auto ws = generate_synthetic(128 * KiB, 32 * KiB, 1, 4);
    const auto plan = plan_layout(ws, AggregationStrategy::file_per_shard(), 4096, false);
    checkpoint(ws, plan, tmp / "v", engine(Backend::Blocking, false), EmulationMode::Batched);
    CHECK_NOTHROW(drop_page_cache(tmp / "v"));
    CHECK(verify_checkpoint(tmp / "v").ok());
}

TEST_CASE("restore phases are all reported")
{
    oracle::TempDir tmp("phases");
    const auto ws = generate_synthetic(128 * KiB, 32 * KiB, 1, 4);
    const auto rt = round_trip(ws, AggregationStrategy::file_per_shard(), engine(Backend::Blocking, false),
                               EmulationMode::Batched, {}, tmp / "v");
    for (auto p : kRestorePhases) CHECK(rt.restored[0].timings.has(p));
    for (auto p : kCheckpointPhases) CHECK(rt.ck.ranks[0].timings.has(p));
    CHECK(rt.restored[0].timings.wall_seconds >= rt.restored[0].timings.sum() * 0.99);
}
