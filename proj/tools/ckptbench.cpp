// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

// ckptbench: checkpoint/restore I/O benchmark driver.

#include "ckptbench/bench.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace ckptbench;

namespace {

struct Options {
    RunConfig run;
    std::string out;
    std::string format = "json";
    std::string preset;
    std::string strategy, backend, emulation, alloc;

    /// Applies the string-valued choices onto `run`.
    void resolve()
    {
        if (!strategy.empty()) run.strategy = strategy_kind_from_string(strategy);
        if (!backend.empty()) run.backend = backend_from_string(backend);
        if (!emulation.empty()) run.emulation = emulation_mode_from_string(emulation);
        if (!alloc.empty()) run.alloc = alloc_mode_from_string(alloc);
        if (run.emulation == EmulationMode::FragmentedChunks && strategy.empty())
            run.strategy = StrategyKind::FixedChunkFragmentation;
    }
};

void add_run_flags(CLI::App* cmd, Options& o, bool synthetic)
{
    auto& c = o.run;
    cmd->add_option("--strategy", o.strategy, "Aggregation strategy")
        ->check(CLI::IsMember({"file-per-shard", "file-per-process", "single-shared-file", "fragmented-chunks"}));
    cmd->add_option("--backend", o.backend, "I/O backend")->check(CLI::IsMember({"ring", "blocking"}));
    cmd->add_flag("--direct,!--buffered", c.direct, "Bypass the page cache (default: buffered)");
    cmd->add_option("--queue-depth", c.queue_depth, "Requests in flight per rank")->check(CLI::Range(1u, 32768u));
    cmd->add_option("--alignment", c.alignment_bytes, "Direct I/O alignment in bytes")->transform(CLI::AsSizeValue(false));
    cmd->add_option("--fragment-size", c.fragment_bytes, "Chunk size of the fragmented-chunks strategy")
        ->transform(CLI::AsSizeValue(false));
    cmd->add_option("--emulation", o.emulation, "I/O submission pattern")
        ->check(CLI::IsMember({"batched", "per-object", "fragmented"}));
    cmd->add_option("--alloc", o.alloc, "Restore buffer allocation")->check(CLI::IsMember({"pooled", "per-object"}));
    cmd->add_option("--pool-region", c.pool_region_bytes, "Buffer pool region size")->transform(CLI::AsSizeValue(false));
    cmd->add_option("--pool-regions", c.pool_regions, "Buffer pool region count")->check(CLI::PositiveNumber);
    cmd->add_option("--runs", c.repetitions, "Repetitions")->check(CLI::PositiveNumber);
    cmd->add_option("--dir", c.dir, "Target directory for checkpoints");
    cmd->add_option("--out", o.out, "Report file (a directory with --preset); stdout when omitted");
    cmd->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    cmd->add_option("--preset", o.preset, "Run a named experiment matrix")->check(CLI::IsMember(preset_names()));
    cmd->add_option("--seed", c.seed, "Master seed for object contents");
    cmd->add_flag("!--no-restore", c.restore, "Skip the restore phase");
    cmd->add_flag("!--keep-cache", c.drop_page_cache, "Do not drop cached checkpoint pages before restoring");
    cmd->add_flag("--keep", c.keep_checkpoints, "Keep the checkpoint of every repetition");
    cmd->add_option("--stripe-hint", c.stripe_hint, "Free-form storage layout note copied into the report");
    cmd->add_option("--timeout", c.rendezvous_timeout_s, "Rendezvous timeout in seconds")->check(CLI::PositiveNumber);
    if (synthetic) {
        cmd->add_option("--chunk-size", c.chunk_bytes, "Tensor size")->transform(CLI::AsSizeValue(false));
        cmd->add_option("--total-size", c.total_bytes, "Bytes per rank")->transform(CLI::AsSizeValue(false));
        cmd->add_option("--ranks", c.num_ranks, "Rank processes")->check(CLI::PositiveNumber);
    } else {
        cmd->add_option("--profile", c.profile, "Built-in profile (3b, 7b, 13b) or a profile file")->required();
        cmd->add_option("--scale", c.scale, "Multiply every object size by this factor")->check(CLI::PositiveNumber);
        cmd->add_option("--chunk-size", c.fragment_bytes, "Alias of --fragment-size for profile workloads")
            ->transform(CLI::AsSizeValue(false));
    }
}

std::string extension(const std::string& format) { return format == "csv" ? ".csv" : ".json"; }

void write_output(const RunReport& r, const std::string& format, const std::string& out)
{
    const auto f = report_format_from_string(format);
    if (out.empty() || out == "-")
        std::cout << (f == ReportFormat::Json ? report_to_json(r) : report_to_csv(r));
    else
        emit_report(r, f, out);
}

void summarize_run(const RunReport& r)
{
    const auto& a = r.aggregate;
    std::fprintf(stderr,
                 "%s %s %s %s ranks=%u runs=%u: write %.1f MiB/s, read %.1f MiB/s, verified %llu objects, %llu failed\n",
                 std::string(to_string(r.config.strategy)).c_str(), std::string(to_string(r.config.backend)).c_str(),
                 r.config.direct ? "direct" : "buffered", std::string(to_string(r.config.emulation)).c_str(),
                 r.config.num_ranks, r.config.repetitions, a.write_throughput_bytes_per_s / MiB,
                 a.read_throughput_bytes_per_s / MiB, static_cast<unsigned long long>(r.verification.objects),
                 static_cast<unsigned long long>(r.verification.failed));
}

std::string self_executable()
{
    std::error_code ec;
    const auto p = fs::read_symlink("/proc/self/exe", ec);
    return ec ? std::string() : p.string();
}

int run_command(Options& o)
{
    o.run.worker_executable = self_executable();

    std::vector<RunConfig> configs;
    if (o.preset.empty())
        configs.push_back(o.run);
    else
        configs = expand_preset(o.preset, o.run);

    bool verified = true;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const RunReport r = run_experiment(configs[i]);
        summarize_run(r);
        verified = verified && r.verification.ok();
        if (o.preset.empty()) {
            write_output(r, o.format, o.out);
        } else {
            const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
            write_output(r, o.format, (dir / (o.preset + "-" + std::to_string(i) + extension(o.format))).string());
        }
    }
    return verified ? kExitOk : kExitVerification;
}

/// Resolves a root directory to its newest committed (or attempted) version.
fs::path resolve_version(const fs::path& dir)
{
    if (fs::exists(dir / kManifestFile) || !fs::is_directory(dir)) return dir;
    fs::path best;
    long best_n = -1;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (!e.is_directory() || name.rfind("ckpt-", 0) != 0) continue;
        char* end = nullptr;
        const long n = std::strtol(name.c_str() + 5, &end, 10);
        if (*end == '\0' && n > best_n) {
            best_n = n;
            best = e.path();
        }
    }
    return best.empty() ? dir : best;
}

int verify_command(const std::string& dir, bool quiet)
{
    const fs::path version = resolve_version(dir);
    const VerificationReport v = verify_checkpoint(version);
    if (!v.usable) {
        std::fprintf(stderr, "%s: unusable: %s\n", version.c_str(), v.reason.c_str());
        return kExitVerification;
    }
    if (!quiet)
        for (const auto& o : v.objects)
            if (o.status != ObjectStatus::Pass)
                std::fprintf(stderr, "object %llu (rank %u): %s %s\n", static_cast<unsigned long long>(o.object_id), o.rank,
                             std::string(to_string(o.status)).c_str(), o.detail.c_str());
    std::printf("%s: %zu objects, %zu passed, %zu failed\n", version.c_str(), v.objects.size(), v.passed(), v.failed());
    return v.ok() ? kExitOk : kExitVerification;
}

int report_command(const std::string& in, const std::string& format, const std::string& out)
{
    std::ifstream f(in);
    if (!f) throw Error(ErrorCode::MissingFile, "cannot read " + in);
    std::stringstream ss;
    ss << f.rdbuf();
    write_output(report_from_json(ss.str()), format, out);
    return kExitOk;
}

std::uint32_t env_u32(const char* name)
{
    const char* v = std::getenv(name);
    require(v != nullptr, ErrorCode::InvalidArgument, std::string(name) + " is not set");
    return static_cast<std::uint32_t>(std::stoul(v));
}

/// Rank process: started by an orchestrator (or an external launcher) with
/// CKPTBENCH_RANK / CKPTBENCH_WORLD / CKPTBENCH_RUN_ID set.
int worker(RunConfig config)
{
    const std::uint32_t rank = env_u32("CKPTBENCH_RANK");
    const std::uint32_t world = env_u32("CKPTBENCH_WORLD");
    const char* run_id = std::getenv("CKPTBENCH_RUN_ID");
    require(run_id && *run_id, ErrorCode::InvalidArgument, "CKPTBENCH_RUN_ID is not set");
    config.num_ranks = world;
    return run_rank(config, rank, run_id);
}

} // namespace

int main(int argc, char** argv)
{
    try {
        if (std::getenv("CKPTBENCH_RANK") && std::getenv("CKPTBENCH_CONFIG")) {
            std::ifstream f(std::getenv("CKPTBENCH_CONFIG"));
            std::stringstream ss;
            ss << f.rdbuf();
            return worker(run_config_from_json(ss.str()));
        }

        CLI::App app{"Checkpoint/restore I/O benchmark"};
        app.require_subcommand(1);
        app.set_version_flag("--version", "ckptbench 0.1.0");

        Options synth;
        auto* synthetic = app.add_subcommand("synthetic", "Synthetic workload: --total-size bytes per rank in --chunk-size tensors");
        add_run_flags(synthetic, synth, true);

        Options model;
        model.run.source = WorkloadSource::Profile;
        auto* llm = app.add_subcommand("llm", "LLM checkpoint profile workload");
        add_run_flags(llm, model, false);

        std::string verify_dir;
        bool quiet = false;
        auto* verify = app.add_subcommand("verify", "Check a checkpoint against its manifest");
        verify->add_option("--dir,dir", verify_dir, "Checkpoint version directory, or a root holding ckpt-<n>")->required();
        verify->add_flag("-q,--quiet", quiet, "Only print the summary line");

        std::string report_in, report_format = "csv", report_out;
        auto* report = app.add_subcommand("report", "Convert a JSON report");
        report->add_option("input", report_in, "JSON report")->required()->check(CLI::ExistingFile);
        report->add_option("--format", report_format, "Output format")->check(CLI::IsMember({"json", "csv"}));
        report->add_option("--out", report_out, "Output file; stdout when omitted");

        CLI11_PARSE(app, argc, argv);

        const bool as_rank = std::getenv("CKPTBENCH_RANK") != nullptr;
        synth.resolve();
        model.resolve();
        if (synthetic->parsed()) return as_rank ? worker(synth.run) : run_command(synth);
        if (llm->parsed()) return as_rank ? worker(model.run) : run_command(model);
        if (verify->parsed()) return verify_command(verify_dir, quiet);
        if (report->parsed()) return report_command(report_in, report_format, report_out);
        return kExitFailure;
    } catch (const Error& ex) {
        std::fprintf(stderr, "ckptbench: %s\n", ex.what());
        return exit_code_for(ex.code());
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "ckptbench: %s\n", ex.what());
        return kExitFailure;
    }
}
