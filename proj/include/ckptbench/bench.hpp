// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/ckpt.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ckptbench {

enum class WorkloadSource { Synthetic, Profile };

struct RunConfig {
    WorkloadSource source = WorkloadSource::Synthetic;
    std::uint64_t total_bytes = 64 * MiB;  // per rank, synthetic
    std::uint64_t chunk_bytes = 4 * MiB;   // tensor size, synthetic
    std::string profile;                   // name or path, profile workloads
    double scale = 1.0;                    // size multiplier for profile workloads
    std::uint64_t seed = 42;

    StrategyKind strategy = StrategyKind::FilePerShard;
    std::uint64_t fragment_bytes = 512 * MiB;
    Backend backend = Backend::Ring;
    bool direct = false;
    std::uint32_t queue_depth = 128;
    std::uint64_t alignment_bytes = kDefaultAlignment;
    EmulationMode emulation = EmulationMode::Batched;
    AllocMode alloc = AllocMode::Pooled;
    std::uint64_t pool_region_bytes = BufferPool::kDefaultRegionSize;
    std::uint32_t pool_regions = BufferPool::kDefaultRegionCount;
    bool restore = true;
    bool drop_page_cache = true;

    std::uint32_t num_ranks = 1;
    std::uint32_t repetitions = 3;
    std::string dir = "ckptbench-data";
    bool keep_checkpoints = false;  // keep every repetition, not only the last
    std::string run_id;             // generated when empty
    std::string preset;             // label of the preset that produced this config
    std::string stripe_hint;        // echoed into the report
    double rendezvous_timeout_s = 60.0;

    /// Rank processes are forked when empty, otherwise this executable is
    /// started with CKPTBENCH_RANK / CKPTBENCH_WORLD / CKPTBENCH_RUN_ID set.
    std::string worker_executable;
    std::vector<std::string> worker_args;

    /// Fault injection: this rank kills itself after its data is synced and
    /// before the manifest is written.
    std::optional<std::uint32_t> kill_before_commit_rank;

    void validate() const;
    EngineConfig engine_config() const;
    AggregationStrategy aggregation() const;

    bool operator==(const RunConfig&) const = default;
};

std::string run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(std::string_view text);

/// Deterministic workload of a run (generation is never timed).
WorkloadSpec make_workload(const RunConfig& c);

// ---------------------------------------------------------------------------
// Rendezvous

/// Filesystem barrier among `world` processes sharing `dir`. Arrival is an
/// atomically created marker file; waiting polls for the other markers.
class Rendezvous {
public:
    Rendezvous(std::filesystem::path dir, std::uint32_t rank, std::uint32_t world,
               std::chrono::duration<double> timeout = std::chrono::seconds(60));

    /// Returns the seconds spent waiting. Throws RendezvousTimeout, or
    /// RankFailure once the run has been aborted.
    double arrive_and_wait(std::string_view name);

    void publish(std::string_view key, std::string_view value);
    /// Waits for a value published by any rank.
    std::string receive(std::string_view key);

    void abort(std::string_view reason);
    bool aborted() const;

    std::uint32_t rank() const noexcept { return rank_; }
    std::uint32_t world() const noexcept { return world_; }
    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    void wait_for(const std::filesystem::path& path, std::string_view what);

    std::filesystem::path dir_;
    std::uint32_t rank_;
    std::uint32_t world_;
    std::chrono::duration<double> timeout_;
};

/// Coordination directory of run `run_id` below `root`.
std::filesystem::path coordination_dir(const std::filesystem::path& root, std::string_view run_id);

Rendezvous rank_rendezvous(std::uint32_t rank, std::uint32_t world, std::string_view run_id,
                           const std::filesystem::path& root,
                           std::chrono::duration<double> timeout = std::chrono::seconds(60));

// ---------------------------------------------------------------------------
// Reports

inline constexpr std::string_view kReportSchema = "ckptbench.report/1";

struct RankMetrics {
    std::uint32_t repetition = 0;
    std::uint32_t rank = 0;
    PhaseTimings checkpoint;
    PhaseTimings restore;
    double write_seconds = 0.0;  // barrier to barrier
    double read_seconds = 0.0;
    double coordination_seconds = 0.0;
    std::uint64_t bytes_written = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t write_ops = 0;
    std::uint64_t tensor_write_ops = 0;
    std::uint64_t read_ops = 0;
    std::uint64_t tensor_read_ops = 0;
    std::uint64_t file_opens = 0;
    std::uint64_t allocations = 0;
    std::uint64_t reuses = 0;
    std::uint64_t objects = 0;
    std::uint64_t objects_failed = 0;
    bool plan_agrees = true;

    bool operator==(const RankMetrics&) const = default;
};

struct Aggregate {
    double write_throughput_bytes_per_s = 0.0;
    double read_throughput_bytes_per_s = 0.0;
    double wall_time_s = 0.0;
    std::uint64_t bytes_written = 0;
    std::uint64_t bytes_read = 0;

    bool operator==(const Aggregate&) const = default;
};

struct Stats {
    double min = 0.0;
    double median = 0.0;
    double max = 0.0;

    bool operator==(const Stats&) const = default;
};

Stats summarize(std::vector<double> values);

/// Σ bytes over ranks divided by the slowest rank's window.
Aggregate aggregate(const std::vector<RankMetrics>& ranks);

struct Environment {
    std::string hostname;
    std::string timestamp;
    std::string kernel;
    std::string stripe_hint;
    bool ring_supported = false;

    bool operator==(const Environment&) const = default;
};

struct VerificationSummary {
    std::uint64_t objects = 0;
    std::uint64_t failed = 0;
    bool manifest_usable = false;

    bool ok() const { return manifest_usable && failed == 0; }
    bool operator==(const VerificationSummary&) const = default;
};

struct RunReport {
    std::string schema_version{kReportSchema};
    std::string run_id;
    RunConfig config;
    Environment environment;
    std::uint64_t plan_file_count = 0;
    std::uint64_t plan_bytes = 0;  // padded (direct) or unpadded (buffered)
    std::vector<RankMetrics> per_rank;  // one row per (repetition, rank)
    std::vector<Aggregate> repetitions;
    Aggregate aggregate;  // medians over repetitions
    std::map<std::string, Stats> statistics;
    VerificationSummary verification;

    bool operator==(const RunReport&) const = default;
};

std::string rank_metrics_to_json(const RankMetrics& m);
RankMetrics rank_metrics_from_json(std::string_view text);

enum class ReportFormat { Json, Csv };
ReportFormat report_format_from_string(std::string_view s);

std::string report_to_json(const RunReport& r);
RunReport report_from_json(std::string_view text);
/// Header plus one row per (repetition, rank).
std::string report_to_csv(const RunReport& r);
void emit_report(const RunReport& r, ReportFormat format, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Orchestration

/// Body of one rank process. After the plan exchange, each repetition runs a
/// timed checkpoint with its commit, then the optional timed restore. Writes its metrics
/// into the coordination directory. Returns a process exit code.
int run_rank(const RunConfig& config, std::uint32_t rank, std::string_view run_id);

/// Starts num_ranks rank processes and merges their metrics once all exit.
/// Throws RankFailure (or RendezvousTimeout / IoError, from the ranks' exit
/// codes) when any rank fails; the others are killed.
RunReport run_experiment(const RunConfig& config);

/// Named matrices of configurations derived from `base`.
std::vector<RunConfig> expand_preset(std::string_view name, const RunConfig& base);
std::vector<std::string> preset_names();

/// Process exit codes shared by the CLI and rank processes.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitVerification = 2,
    kExitIo = 3,
    kExitRendezvous = 4,
};

int exit_code_for(ErrorCode code);

} // namespace ckptbench
