// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/engine.hpp"
#include "ckptbench/layout.hpp"
#include "ckptbench/workload.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ckptbench {

enum class EmulationMode { Batched, PerObjectImmediate, FragmentedChunks };
enum class AllocMode { Pooled, PerObject };

std::string_view to_string(EmulationMode m);
std::string_view to_string(AllocMode m);
EmulationMode emulation_mode_from_string(std::string_view s);
AllocMode alloc_mode_from_string(std::string_view s);

// ---------------------------------------------------------------------------
// Timing

/// Named, non-overlapping stage durations in seconds, in first-seen order.
class PhaseTimings {
public:
    void add(std::string_view name, double seconds);
    /// Registers a stage with zero duration if it is not present yet.
    void touch(std::string_view name) { add(name, 0.0); }
    double get(std::string_view name) const;
    bool has(std::string_view name) const;
    double sum() const;
    const std::vector<std::pair<std::string, double>>& phases() const noexcept { return phases_; }

    double wall_seconds = 0.0;

    bool operator==(const PhaseTimings&) const = default;

private:
    std::vector<std::pair<std::string, double>> phases_;
};

/// Adds the time between construction and stop() (or destruction) to a phase.
class PhaseTimer {
public:
    PhaseTimer(PhaseTimings& timings, std::string_view name) : timings_(&timings), name_(name), start_(Clock::now()) {}
    PhaseTimer(const PhaseTimer&) = delete;
    PhaseTimer& operator=(const PhaseTimer&) = delete;
    ~PhaseTimer() { stop(); }

    void stop();

private:
    PhaseTimings* timings_;
    std::string name_;
    Clock::time_point start_;
};

double seconds_between(Clock::time_point a, Clock::time_point b);

inline constexpr std::string_view kCheckpointPhases[] = {"serialize", "staging", "flush", "sync", "manifest"};
inline constexpr std::string_view kRestorePhases[] = {"manifest_read", "lean_read", "alloc", "tensor_read", "staging", "verify"};

struct IoStats {
    std::uint64_t bytes_written = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t write_ops = 0;
    std::uint64_t tensor_write_ops = 0;
    std::uint64_t read_ops = 0;
    std::uint64_t tensor_read_ops = 0;
    std::uint64_t file_opens = 0;
    std::uint64_t allocations = 0;
    std::uint64_t reuses = 0;

    bool operator==(const IoStats&) const = default;
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestExtent {
    std::string file_key;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    std::uint64_t padded_length = 0;
    std::uint64_t object_offset = 0;

    bool operator==(const ManifestExtent&) const = default;
};

struct ManifestEntry {
    std::uint64_t object_id = 0;
    std::uint32_t rank = 0;
    std::uint32_t shard = 0;
    ObjectKind kind = ObjectKind::Tensor;
    std::uint64_t length = 0;
    std::uint64_t checksum = 0;
    std::vector<ManifestExtent> extents;  // more than one only for fragmented chunks

    bool operator==(const ManifestEntry&) const = default;
};

inline constexpr std::string_view kManifestSchema = "ckptbench.manifest/1";
inline constexpr std::string_view kManifestFile = "manifest.json";

struct Manifest {
    std::uint64_t checkpoint_version = 0;
    std::string workload_name;
    AggregationStrategy strategy;
    std::uint64_t alignment_bytes = kDefaultAlignment;
    bool direct = false;
    std::uint32_t num_ranks = 1;
    std::string created_at;  // UTC, ISO 8601
    std::vector<ManifestEntry> entries;  // sorted by object_id

    std::uint64_t total_length() const;
    bool operator==(const Manifest&) const = default;
};

/// Canonical JSON with a fixed key order. Checksums are "0x" + 16 hex digits.
std::string manifest_to_json(const Manifest& m);
/// Throws ShortManifest when the text is truncated or the entry count does
/// not match the recorded object_count, SchemaMismatch on a foreign schema.
Manifest manifest_from_json(std::string_view text);
Manifest read_manifest(const std::filesystem::path& version_dir);

/// Entries for every object of `rank`, checksums taken from `checksums`.
std::vector<ManifestEntry> manifest_entries(const LayoutPlan& plan, std::uint32_t rank,
                                            const std::map<std::uint64_t, std::uint64_t>& checksums);

// ---------------------------------------------------------------------------
// Checkpoint

/// One write request of a rank: a contiguous file range fed from a
/// contiguous range of the rank's staging buffer.
struct ScheduledRequest {
    std::string file_key;
    std::uint64_t file_offset = 0;
    std::uint64_t buffer_offset = 0;
    std::uint64_t length = 0;  // padded in direct mode
    bool tensor_data = false;
    std::vector<std::uint64_t> object_ids;
};

/// Exact sequence of write requests the checkpoint pipeline submits for one
/// rank. Each shard's adjacent header and lean object travel as one request;
/// every tensor placement entry (each chunk, for fragmented layouts) is one
/// request of its own.
struct WriteSchedule {
    std::vector<ScheduledRequest> requests;
    std::map<std::uint64_t, std::uint64_t> object_buffer_offset;
    std::uint64_t buffer_bytes = 0;

    std::size_t tensor_requests() const;
};

WriteSchedule build_write_schedule(const LayoutPlan& plan, std::uint32_t rank);

/// Creates the version directory and strategy subdirectory, removes any
/// previous manifest (durably) and creates or truncates a shared file. Must
/// run once, before any rank writes.
void prepare_version_dir(const LayoutPlan& plan, const std::filesystem::path& version_dir);

std::filesystem::path version_dir(const std::filesystem::path& root, std::uint64_t version);

struct RankCheckpoint {
    std::uint32_t rank = 0;
    PhaseTimings timings;
    IoStats stats;
    std::vector<ManifestEntry> entries;
};

/// Checkpoint pipeline of one rank. The constructor allocates the staging
/// buffer and the engine so that write() only runs the timed stages; write()
/// may be repeated for several versions.
class CheckpointWriter {
public:
    CheckpointWriter(const WorkloadSpec& workload, const LayoutPlan& plan, std::uint32_t rank,
                     const EngineConfig& config, EmulationMode mode);
    ~CheckpointWriter();
    CheckpointWriter(CheckpointWriter&&) noexcept;
    CheckpointWriter& operator=(CheckpointWriter&&) noexcept;

    /// Writes every object of the rank into `version_dir` and syncs it. The
    /// manifest is not written. Throws on any failed write.
    RankCheckpoint write(const std::filesystem::path& version_dir);

    const WriteSchedule& schedule() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Writes every object of `rank` into `version_dir` following `plan`.
/// FragmentedChunks requires a fixed-chunk-fragmentation plan. Data is synced
/// before returning; the manifest is not written. Throws on any failed write.
RankCheckpoint checkpoint_rank(const WorkloadSpec& workload,
                               const LayoutPlan& plan,
                               std::uint32_t rank,
                               const std::filesystem::path& version_dir,
                               const EngineConfig& config,
                               EmulationMode mode);

/// Per-rank entry fragments let one process assemble the manifest.
void write_manifest_fragment(const std::filesystem::path& version_dir, std::uint32_t rank,
                             const std::vector<ManifestEntry>& entries);

/// Merges the fragments of all ranks into manifest.json by writing a temporary
/// file that is renamed into place and made durable with a directory sync.
/// The fragments are removed afterwards. The rename is
/// the commit point of a checkpoint version.
Manifest commit_manifest(const std::filesystem::path& version_dir,
                         const WorkloadSpec& workload,
                         const LayoutPlan& plan,
                         std::uint64_t checkpoint_version);

struct CheckpointResult {
    Manifest manifest;
    std::vector<RankCheckpoint> ranks;
};

/// All ranks in this process, one after another, then the commit.
/// `before_commit` runs after every rank's data is synced and before the
/// manifest is written.
CheckpointResult checkpoint(const WorkloadSpec& workload,
                            const LayoutPlan& plan,
                            const std::filesystem::path& version_dir,
                            const EngineConfig& config,
                            EmulationMode mode,
                            std::uint64_t checkpoint_version = 0,
                            const std::function<void()>& before_commit = {});

// ---------------------------------------------------------------------------
// Restore and verification

enum class ObjectStatus { Pass, ChecksumMismatch, ReadError, MissingFile };
std::string_view to_string(ObjectStatus s);

struct ObjectResult {
    std::uint64_t object_id = 0;
    std::uint32_t rank = 0;
    ObjectStatus status = ObjectStatus::Pass;
    std::string detail;

    bool operator==(const ObjectResult&) const = default;
};

struct RestoreOptions {
    AllocMode alloc = AllocMode::Pooled;
    EmulationMode mode = EmulationMode::Batched;
    std::uint64_t pool_region_bytes = BufferPool::kDefaultRegionSize;
    std::size_t pool_regions = BufferPool::kDefaultRegionCount;
};

struct RankRestore {
    std::uint32_t rank = 0;
    PhaseTimings timings;
    IoStats stats;
    std::vector<ObjectResult> objects;  // in manifest order
    std::uint64_t pool_region_bytes = 0;
    std::size_t pool_regions = 0;

    std::size_t passed() const;
    bool ok() const { return passed() == objects.size(); }
};

/// Restore pipeline of one rank. The constructor reads the manifest once to
/// size every buffer and the engine. read() runs the timed stages, starting
/// with a fresh manifest read.
class RestoreReader {
public:
    RestoreReader(const std::filesystem::path& version_dir, std::uint32_t rank, const EngineConfig& config,
                  const RestoreOptions& options);
    ~RestoreReader();
    RestoreReader(RestoreReader&&) noexcept;
    RestoreReader& operator=(RestoreReader&&) noexcept;

    /// Single use.
    RankRestore read();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Restores the objects of `rank` from a committed version directory and
/// checks each against its manifest checksum. Missing manifest: MissingFile.
/// Missing or damaged data files are reported per object, not thrown.
RankRestore restore_rank(const std::filesystem::path& version_dir,
                         std::uint32_t rank,
                         const EngineConfig& config,
                         const RestoreOptions& options);

std::vector<RankRestore> restore(const std::filesystem::path& version_dir,
                                 const EngineConfig& config,
                                 const RestoreOptions& options);

struct VerificationReport {
    bool usable = false;  // a parseable, complete manifest exists
    std::string reason;
    std::vector<ObjectResult> objects;

    std::size_t passed() const;
    std::size_t failed() const { return objects.size() - passed(); }
    bool ok() const { return usable && failed() == 0; }
};

/// Plain sequential reads of every extent; no timing.
VerificationReport verify_checkpoint(const std::filesystem::path& version_dir);

/// Writes back dirty pages and asks the kernel to drop cached pages of every
/// regular file below `dir`.
void drop_page_cache(const std::filesystem::path& dir);

} // namespace ckptbench
