// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/bench.hpp"

#include "fs_util.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <set>

#include <spawn.h>
#include <sys/utsname.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace ckptbench {

namespace fs = std::filesystem;

void RunConfig::validate() const
{
    require(repetitions >= 1, ErrorCode::InvalidArgument, "repetitions must be >= 1");
    require(rendezvous_timeout_s > 0, ErrorCode::InvalidArgument, "rendezvous timeout must be positive");
    require(is_power_of_two(alignment_bytes) && alignment_bytes >= 512, ErrorCode::InvalidAlignment,
            "alignment " + std::to_string(alignment_bytes) + " is not a power of two >= 512");
    require(emulation != EmulationMode::FragmentedChunks || strategy == StrategyKind::FixedChunkFragmentation,
            ErrorCode::InvalidArgument, "fragmented emulation needs the fragmented-chunks strategy");
    require(pool_regions >= 1 && pool_region_bytes >= 1, ErrorCode::InvalidArgument, "buffer pool needs >= 1 region");
    if (source == WorkloadSource::Synthetic)
        require(num_ranks >= 1, ErrorCode::InvalidArgument, "rank count must be >= 1");
    else
        require(!profile.empty() && scale > 0, ErrorCode::InvalidArgument, "profile workloads need a profile and a positive scale");
    engine_config().validate();
}

EngineConfig RunConfig::engine_config() const
{
    EngineConfig e;
    e.backend = backend;
    e.queue_depth = queue_depth;
    e.direct = direct;
    e.alignment_bytes = alignment_bytes;
    return e;
}

AggregationStrategy RunConfig::aggregation() const { return AggregationStrategy{strategy, fragment_bytes}; }

WorkloadSpec make_workload(const RunConfig& c)
{
    if (c.source == WorkloadSource::Synthetic) return generate_synthetic(c.total_bytes, c.chunk_bytes, c.num_ranks, c.seed);
    ModelProfile p = resolve_profile(c.profile);
    if (c.scale != 1.0) p = scale_profile(p, c.scale);
    return generate_from_profile(p, c.seed);
}

// ---------------------------------------------------------------------------

namespace {

fs::path result_path(const fs::path& coord, std::uint32_t rep, std::uint32_t rank)
{
    return coord / ("result-rep" + std::to_string(rep) + "-rank" + std::to_string(rank) + ".json");
}

fs::path error_path(const fs::path& coord, std::uint32_t rank)
{
    return coord / ("error-rank" + std::to_string(rank) + ".txt");
}

EmulationMode restore_mode(EmulationMode m)
{
    // Chunk files are read back one at a time, as they were written.
    return m == EmulationMode::FragmentedChunks ? EmulationMode::PerObjectImmediate : m;
}

int run_rank_body(const RunConfig& config, std::uint32_t rank, Rendezvous& rv)
{
    const fs::path root = config.dir;
    const WorkloadSpec workload = make_workload(config);
    const LayoutPlan local = plan_layout(workload, config.aggregation(), config.alignment_bytes, config.direct);

    double coordination = 0.0;
    const auto c0 = Clock::now();
    LayoutPlan plan;
    if (rank == 0) {
        rv.publish("plan.json", layout_to_json(local));
        plan = local;
    } else {
        plan = layout_from_json(rv.receive("plan.json"));
    }
    coordination += seconds_between(c0, Clock::now());
    const bool agrees = plan == local;

    const EngineConfig engine = config.engine_config();
    RestoreOptions ropt;
    ropt.alloc = config.alloc;
    ropt.mode = restore_mode(config.emulation);
    ropt.pool_region_bytes = config.pool_region_bytes;
    ropt.pool_regions = config.pool_regions;

    CheckpointWriter writer(workload, plan, rank, engine, config.emulation);

    for (std::uint32_t rep = 0; rep < config.repetitions; ++rep) {
        const std::string tag = std::to_string(rep);
        const fs::path vdir = version_dir(root, rep);
        if (rank == 0) prepare_version_dir(plan, vdir);

        RankMetrics m;
        m.repetition = rep;
        m.rank = rank;
        m.plan_agrees = agrees;

        coordination += rv.arrive_and_wait("write-start-" + tag);
        const auto w0 = Clock::now();
        RankCheckpoint ck = writer.write(vdir);
        write_manifest_fragment(vdir, rank, ck.entries);
        if (config.kill_before_commit_rank && *config.kill_before_commit_rank == rank) ::kill(::getpid(), SIGKILL);
        rv.arrive_and_wait("write-synced-" + tag);
        if (rank == 0) {
            const auto t0 = Clock::now();
            commit_manifest(vdir, workload, plan, rep);
            ck.timings.add("manifest", seconds_between(t0, Clock::now()));
        } else {
            ck.timings.touch("manifest");
        }
        rv.arrive_and_wait("write-committed-" + tag);
        m.write_seconds = seconds_between(w0, Clock::now());
        ck.timings.wall_seconds = std::max(ck.timings.wall_seconds, ck.timings.sum());

        m.checkpoint = ck.timings;
        m.bytes_written = ck.stats.bytes_written;
        m.write_ops = ck.stats.write_ops;
        m.tensor_write_ops = ck.stats.tensor_write_ops;
        m.file_opens = ck.stats.file_opens;
        m.objects = ck.entries.size();

        if (config.restore) {
            if (rank == 0 && config.drop_page_cache) drop_page_cache(vdir);
            coordination += rv.arrive_and_wait("read-ready-" + tag);
            RestoreReader reader(vdir, rank, engine, ropt);
            coordination += rv.arrive_and_wait("read-start-" + tag);
            const auto r0 = Clock::now();
            RankRestore rr = reader.read();
            rv.arrive_and_wait("read-done-" + tag);
            m.read_seconds = seconds_between(r0, Clock::now());
            m.restore = rr.timings;
            m.bytes_read = rr.stats.bytes_read;
            m.read_ops = rr.stats.read_ops;
            m.tensor_read_ops = rr.stats.tensor_read_ops;
            m.file_opens += rr.stats.file_opens;
            m.allocations = rr.stats.allocations;
            m.reuses = rr.stats.reuses;
            m.objects_failed = rr.objects.size() - rr.passed();
        } else {
            for (auto p : kRestorePhases) m.restore.touch(p);
        }
        m.coordination_seconds = coordination;
        coordination = 0.0;
        fsutil::write_file_atomic(result_path(rv.dir(), rep, rank), rank_metrics_to_json(m), false);

        if (!config.keep_checkpoints && rep + 1 < config.repetitions) {
            coordination += rv.arrive_and_wait("cleanup-" + tag);
            if (rank == 0) fs::remove_all(vdir);
        }
    }
    return kExitOk;
}

std::string generate_run_id()
{
    static std::atomic<unsigned> counter{0};
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    ::gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
    return std::string("run-") + buf + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
}

Environment capture_environment(const RunConfig& c)
{
    Environment env;
    char host[256] = {};
    ::gethostname(host, sizeof host - 1);
    env.hostname = host;
    utsname u{};
    if (::uname(&u) == 0) env.kernel = std::string(u.sysname) + " " + u.release;
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    ::gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    env.timestamp = buf;
    env.stripe_hint = c.stripe_hint;
    env.ring_supported = ring_supported();
    return env;
}

pid_t spawn_rank(const RunConfig& c, std::uint32_t rank, const std::string& run_id, const fs::path& config_path)
{
    if (c.worker_executable.empty()) {
        const pid_t pid = ::fork();
        if (pid < 0) throw Error(ErrorCode::RankFailure, std::string("fork: ") + std::strerror(errno));
        if (pid == 0) {
            int code = kExitFailure;
            try {
                code = run_rank(c, rank, run_id);
            } catch (...) {
            }
            std::_Exit(code);
        }
        return pid;
    }

    std::vector<std::string> env_strings;
    for (char** e = environ; *e; ++e) {
        const std::string_view kv(*e);
        if (kv.starts_with("CKPTBENCH_")) continue;
        env_strings.emplace_back(kv);
    }
    env_strings.push_back("CKPTBENCH_RANK=" + std::to_string(rank));
    env_strings.push_back("CKPTBENCH_WORLD=" + std::to_string(c.num_ranks));
    env_strings.push_back("CKPTBENCH_RUN_ID=" + run_id);
    env_strings.push_back("CKPTBENCH_CONFIG=" + config_path.string());
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);

    std::vector<std::string> args{c.worker_executable};
    args.insert(args.end(), c.worker_args.begin(), c.worker_args.end());
    std::vector<char*> argv;
    for (auto& s : args) argv.push_back(s.data());
    argv.push_back(nullptr);

    pid_t pid = -1;
    if (const int rc = ::posix_spawn(&pid, c.worker_executable.c_str(), nullptr, nullptr, argv.data(), envp.data()); rc != 0)
        throw Error(ErrorCode::RankFailure, "spawn " + c.worker_executable + ": " + std::strerror(rc));
    return pid;
}

std::string describe_status(int status)
{
    if (WIFEXITED(status)) return "exit code " + std::to_string(WEXITSTATUS(status));
    if (WIFSIGNALED(status)) return std::string("signal ") + ::strsignal(WTERMSIG(status));
    return "status " + std::to_string(status);
}

} // namespace

int run_rank(const RunConfig& config, std::uint32_t rank, std::string_view run_id)
{
    const fs::path coord = coordination_dir(config.dir, run_id);
    try {
        config.validate();
        Rendezvous rv(coord, rank, std::max<std::uint32_t>(config.num_ranks, 1),
                      std::chrono::duration<double>(config.rendezvous_timeout_s));
        return run_rank_body(config, rank, rv);
    } catch (const Error& ex) {
        try {
            fsutil::write_file_atomic(error_path(coord, rank), ex.what(), false);
        } catch (...) {
        }
        return exit_code_for(ex.code());
    } catch (const std::exception& ex) {
        try {
            fsutil::write_file_atomic(error_path(coord, rank), ex.what(), false);
        } catch (...) {
        }
        return kExitFailure;
    }
}

RunReport run_experiment(const RunConfig& requested)
{
    RunConfig c = requested;
    c.validate();
    if (c.run_id.empty()) c.run_id = generate_run_id();
    const WorkloadSpec workload = make_workload(c);
    c.num_ranks = workload.num_ranks;
    const LayoutPlan plan = plan_layout(workload, c.aggregation(), c.alignment_bytes, c.direct);

    RunReport report;
    report.run_id = c.run_id;
    report.config = c;
    report.environment = capture_environment(c);
    report.plan_file_count = plan.file_count;
    report.plan_bytes = c.direct ? total_padded_bytes(plan) : total_length_bytes(plan);

    const fs::path coord = coordination_dir(c.dir, c.run_id);
    std::error_code ec;
    fs::remove_all(coord, ec);
    fs::create_directories(coord, ec);
    if (ec) throw Error(ErrorCode::PathError, "cannot create " + coord.string() + ": " + ec.message());
    const fs::path config_path = coord / "config.json";
    fsutil::write_file_atomic(config_path, run_config_to_json(c), false);

    std::map<pid_t, std::uint32_t> children;
    auto kill_all = [&] {
        for (const auto& [pid, rank] : children) ::kill(pid, SIGKILL);
        for (const auto& [pid, rank] : children) ::waitpid(pid, nullptr, 0);
        children.clear();
    };
    try {
        for (std::uint32_t r = 0; r < c.num_ranks; ++r) children.emplace(spawn_rank(c, r, c.run_id, config_path), r);
    } catch (...) {
        Rendezvous(coord, 0, 1).abort("spawn failed");
        kill_all();
        throw;
    }

    std::optional<std::pair<std::uint32_t, int>> failure;
    while (!children.empty()) {
        int status = 0;
        const pid_t pid = ::waitpid(-1, &status, 0);
        if (pid < 0) {
            if (errno == EINTR) continue;
            break;
        }
        auto it = children.find(pid);
        if (it == children.end()) continue;
        const std::uint32_t rank = it->second;
        children.erase(it);
        if (!(WIFEXITED(status) && WEXITSTATUS(status) == kExitOk)) {
            failure = {rank, status};
            Rendezvous(coord, 0, 1).abort("rank " + std::to_string(rank) + " failed: " + describe_status(status));
            kill_all();
        }
    }

    if (failure) {
        const auto [rank, status] = *failure;
        std::string msg = "rank " + std::to_string(rank) + " failed with " + describe_status(status);
        for (std::uint32_t r = 0; r < c.num_ranks; ++r) {
            std::error_code e2;
            if (fs::exists(error_path(coord, r), e2)) msg += "; rank " + std::to_string(r) + ": " + fsutil::read_file(error_path(coord, r));
        }
        ErrorCode code = ErrorCode::RankFailure;
        if (WIFEXITED(status) && WEXITSTATUS(status) == kExitRendezvous) code = ErrorCode::RendezvousTimeout;
        if (WIFEXITED(status) && WEXITSTATUS(status) == kExitIo) code = ErrorCode::IoError;
        throw Error(code, msg);
    }

    std::vector<double> wt, rt, wall;
    for (std::uint32_t rep = 0; rep < c.repetitions; ++rep) {
        std::vector<RankMetrics> ranks;
        for (std::uint32_t r = 0; r < c.num_ranks; ++r)
            ranks.push_back(rank_metrics_from_json(fsutil::read_file(result_path(coord, rep, r))));
        const Aggregate a = aggregate(ranks);
        report.repetitions.push_back(a);
        wt.push_back(a.write_throughput_bytes_per_s);
        rt.push_back(a.read_throughput_bytes_per_s);
        wall.push_back(a.wall_time_s);
        std::uint64_t failed = 0;
        for (auto& m : ranks) failed += m.objects_failed;
        report.verification.failed = std::max(report.verification.failed, failed);
        report.per_rank.insert(report.per_rank.end(), ranks.begin(), ranks.end());
    }
    report.statistics["write_throughput_bytes_per_s"] = summarize(wt);
    report.statistics["read_throughput_bytes_per_s"] = summarize(rt);
    report.statistics["wall_time_s"] = summarize(wall);
    report.aggregate.write_throughput_bytes_per_s = report.statistics["write_throughput_bytes_per_s"].median;
    report.aggregate.read_throughput_bytes_per_s = report.statistics["read_throughput_bytes_per_s"].median;
    report.aggregate.wall_time_s = report.statistics["wall_time_s"].median;
    report.aggregate.bytes_written = report.repetitions.back().bytes_written;
    report.aggregate.bytes_read = report.repetitions.back().bytes_read;

    report.verification.objects = c.restore ? workload.objects.size() : 0;
    try {
        const Manifest m = read_manifest(version_dir(c.dir, c.repetitions - 1));
        report.verification.manifest_usable = m.entries.size() == workload.objects.size();
    } catch (const Error&) {
        report.verification.manifest_usable = false;
    }

    fs::remove_all(coord, ec);
    return report;
}

// ---------------------------------------------------------------------------

std::vector<std::string> preset_names()
{
    return {"aggregation-sweep", "odirect-sweep", "engine-comparison", "llm-profiles"};
}

std::vector<RunConfig> expand_preset(std::string_view name, const RunConfig& base)
{
    const StrategyKind three[] = {StrategyKind::FilePerShard, StrategyKind::FilePerProcess, StrategyKind::SingleSharedFile};
    std::vector<RunConfig> out;
    auto add = [&](RunConfig c) {
        c.preset = std::string(name);
        c.run_id.clear();
        out.push_back(std::move(c));
    };

    if (name == "aggregation-sweep") {
        for (auto s : three) {
            RunConfig c = base;
            c.strategy = s;
            if (c.emulation == EmulationMode::FragmentedChunks) c.emulation = EmulationMode::Batched;
            add(c);
        }
    } else if (name == "odirect-sweep") {
        for (auto s : three)
            for (bool direct : {true, false}) {
                RunConfig c = base;
                c.strategy = s;
                c.direct = direct;
                if (c.emulation == EmulationMode::FragmentedChunks) c.emulation = EmulationMode::Batched;
                add(c);
            }
    } else if (name == "engine-comparison") {
        const std::pair<EmulationMode, StrategyKind> engines[] = {
            {EmulationMode::Batched, StrategyKind::SingleSharedFile},
            {EmulationMode::PerObjectImmediate, StrategyKind::FilePerShard},
            {EmulationMode::FragmentedChunks, StrategyKind::FixedChunkFragmentation},
        };
        for (const auto& [mode, strategy] : engines)
            for (AllocMode alloc : {AllocMode::Pooled, AllocMode::PerObject}) {
                RunConfig c = base;
                c.emulation = mode;
                c.strategy = strategy;
                c.alloc = alloc;
                c.restore = true;
                add(c);
            }
    } else if (name == "llm-profiles") {
        const std::pair<EmulationMode, StrategyKind> engines[] = {
            {EmulationMode::Batched, StrategyKind::SingleSharedFile},
            {EmulationMode::PerObjectImmediate, StrategyKind::FilePerShard},
        };
        for (const char* profile : {"3b", "7b", "13b"})
            for (const auto& [mode, strategy] : engines) {
                RunConfig c = base;
                c.source = WorkloadSource::Profile;
                c.profile = profile;
                c.emulation = mode;
                c.strategy = strategy;
                add(c);
            }
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown preset '" + std::string(name) + "'");
    }
    return out;
}

} // namespace ckptbench
