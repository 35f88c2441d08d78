// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/bench.hpp"

#include "fs_util.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <sstream>

namespace ckptbench {

namespace {

using json::ordered;

ordered timings_to_json(const PhaseTimings& t)
{
    ordered j;
    auto& phases = j["phases"] = ordered::object();
    for (const auto& [name, s] : t.phases()) phases[name] = s;
    j["wall_seconds"] = t.wall_seconds;
    return j;
}

PhaseTimings timings_from_json(const ordered& j)
{
    PhaseTimings t;
    for (const auto& [name, s] : j.at("phases").items()) t.add(name, s.get<double>());
    t.wall_seconds = j.at("wall_seconds").get<double>();
    return t;
}

ordered aggregate_to_json(const Aggregate& a)
{
    ordered j;
    j["write_throughput_bytes_per_s"] = a.write_throughput_bytes_per_s;
    j["read_throughput_bytes_per_s"] = a.read_throughput_bytes_per_s;
    j["wall_time_s"] = a.wall_time_s;
    j["bytes_written"] = a.bytes_written;
    j["bytes_read"] = a.bytes_read;
    return j;
}

Aggregate aggregate_from_json(const ordered& j)
{
    Aggregate a;
    a.write_throughput_bytes_per_s = j.at("write_throughput_bytes_per_s").get<double>();
    a.read_throughput_bytes_per_s = j.at("read_throughput_bytes_per_s").get<double>();
    a.wall_time_s = j.at("wall_time_s").get<double>();
    a.bytes_written = j.at("bytes_written").get<std::uint64_t>();
    a.bytes_read = j.at("bytes_read").get<std::uint64_t>();
    return a;
}

ordered config_to_json(const RunConfig& c)
{
    ordered j;
    j["workload"] = c.source == WorkloadSource::Synthetic ? "synthetic" : "profile";
    j["total_bytes"] = c.total_bytes;
    j["chunk_bytes"] = c.chunk_bytes;
    j["profile"] = c.profile;
    j["scale"] = c.scale;
    j["seed"] = c.seed;
    j["strategy"] = std::string(to_string(c.strategy));
    j["fragment_bytes"] = c.fragment_bytes;
    j["backend"] = std::string(to_string(c.backend));
    j["direct"] = c.direct;
    j["queue_depth"] = c.queue_depth;
    j["alignment_bytes"] = c.alignment_bytes;
    j["emulation"] = std::string(to_string(c.emulation));
    j["alloc"] = std::string(to_string(c.alloc));
    j["pool_region_bytes"] = c.pool_region_bytes;
    j["pool_regions"] = c.pool_regions;
    j["restore"] = c.restore;
    j["drop_page_cache"] = c.drop_page_cache;
    j["num_ranks"] = c.num_ranks;
    j["repetitions"] = c.repetitions;
    j["dir"] = c.dir;
    j["keep_checkpoints"] = c.keep_checkpoints;
    j["run_id"] = c.run_id;
    j["preset"] = c.preset;
    j["stripe_hint"] = c.stripe_hint;
    j["rendezvous_timeout_s"] = c.rendezvous_timeout_s;
    j["worker_executable"] = c.worker_executable;
    j["worker_args"] = c.worker_args;
    j["kill_before_commit_rank"] = c.kill_before_commit_rank ? ordered(*c.kill_before_commit_rank) : ordered(nullptr);
    return j;
}

RunConfig config_from_json(const ordered& j)
{
    RunConfig c;
    const auto src = j.at("workload").get<std::string>();
    require(src == "synthetic" || src == "profile", ErrorCode::SchemaMismatch, "unknown workload source '" + src + "'");
    c.source = src == "synthetic" ? WorkloadSource::Synthetic : WorkloadSource::Profile;
    c.total_bytes = j.at("total_bytes").get<std::uint64_t>();
    c.chunk_bytes = j.at("chunk_bytes").get<std::uint64_t>();
    c.profile = j.at("profile").get<std::string>();
    c.scale = j.at("scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.strategy = strategy_kind_from_string(j.at("strategy").get<std::string>());
    c.fragment_bytes = j.at("fragment_bytes").get<std::uint64_t>();
    c.backend = backend_from_string(j.at("backend").get<std::string>());
    c.direct = j.at("direct").get<bool>();
    c.queue_depth = j.at("queue_depth").get<std::uint32_t>();
    c.alignment_bytes = j.at("alignment_bytes").get<std::uint64_t>();
    c.emulation = emulation_mode_from_string(j.at("emulation").get<std::string>());
    c.alloc = alloc_mode_from_string(j.at("alloc").get<std::string>());
    c.pool_region_bytes = j.at("pool_region_bytes").get<std::uint64_t>();
    c.pool_regions = j.at("pool_regions").get<std::uint32_t>();
    c.restore = j.at("restore").get<bool>();
    c.drop_page_cache = j.at("drop_page_cache").get<bool>();
    c.num_ranks = j.at("num_ranks").get<std::uint32_t>();
    c.repetitions = j.at("repetitions").get<std::uint32_t>();
    c.dir = j.at("dir").get<std::string>();
    c.keep_checkpoints = j.at("keep_checkpoints").get<bool>();
    c.run_id = j.at("run_id").get<std::string>();
    c.preset = j.at("preset").get<std::string>();
    c.stripe_hint = j.at("stripe_hint").get<std::string>();
    c.rendezvous_timeout_s = j.at("rendezvous_timeout_s").get<double>();
    c.worker_executable = j.at("worker_executable").get<std::string>();
    c.worker_args = j.at("worker_args").get<std::vector<std::string>>();
    if (!j.at("kill_before_commit_rank").is_null())
        c.kill_before_commit_rank = j.at("kill_before_commit_rank").get<std::uint32_t>();
    return c;
}

ordered metrics_to_json(const RankMetrics& m)
{
    ordered j;
    j["repetition"] = m.repetition;
    j["rank"] = m.rank;
    j["write_seconds"] = m.write_seconds;
    j["read_seconds"] = m.read_seconds;
    j["coordination_seconds"] = m.coordination_seconds;
    j["bytes_written"] = m.bytes_written;
    j["bytes_read"] = m.bytes_read;
    j["write_ops"] = m.write_ops;
    j["tensor_write_ops"] = m.tensor_write_ops;
    j["read_ops"] = m.read_ops;
    j["tensor_read_ops"] = m.tensor_read_ops;
    j["file_opens"] = m.file_opens;
    j["allocations"] = m.allocations;
    j["reuses"] = m.reuses;
    j["objects"] = m.objects;
    j["objects_failed"] = m.objects_failed;
    j["plan_agrees"] = m.plan_agrees;
    j["checkpoint"] = timings_to_json(m.checkpoint);
    j["restore"] = timings_to_json(m.restore);
    return j;
}

RankMetrics metrics_from_json(const ordered& j)
{
    RankMetrics m;
    m.repetition = j.at("repetition").get<std::uint32_t>();
    m.rank = j.at("rank").get<std::uint32_t>();
    m.write_seconds = j.at("write_seconds").get<double>();
    m.read_seconds = j.at("read_seconds").get<double>();
    m.coordination_seconds = j.at("coordination_seconds").get<double>();
    m.bytes_written = j.at("bytes_written").get<std::uint64_t>();
    m.bytes_read = j.at("bytes_read").get<std::uint64_t>();
    m.write_ops = j.at("write_ops").get<std::uint64_t>();
    m.tensor_write_ops = j.at("tensor_write_ops").get<std::uint64_t>();
    m.read_ops = j.at("read_ops").get<std::uint64_t>();
    m.tensor_read_ops = j.at("tensor_read_ops").get<std::uint64_t>();
    m.file_opens = j.at("file_opens").get<std::uint64_t>();
    m.allocations = j.at("allocations").get<std::uint64_t>();
    m.reuses = j.at("reuses").get<std::uint64_t>();
    m.objects = j.at("objects").get<std::uint64_t>();
    m.objects_failed = j.at("objects_failed").get<std::uint64_t>();
    m.plan_agrees = j.at("plan_agrees").get<bool>();
    m.checkpoint = timings_from_json(j.at("checkpoint"));
    m.restore = timings_from_json(j.at("restore"));
    return m;
}

template <typename F>
auto with_schema_errors(std::string_view what, F&& f)
{
    try {
        return f();
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaMismatch, std::string(what) + ": " + ex.what());
    }
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

std::string run_config_to_json(const RunConfig& c) { return config_to_json(c).dump(2); }

std::string rank_metrics_to_json(const RankMetrics& m) { return metrics_to_json(m).dump(); }

RankMetrics rank_metrics_from_json(std::string_view text)
{
    const auto j = json::parse_or_throw(text, ErrorCode::SchemaMismatch, "rank metrics");
    return with_schema_errors("rank metrics", [&] { return metrics_from_json(j); });
}

RunConfig run_config_from_json(std::string_view text)
{
    const auto j = json::parse_or_throw(text, ErrorCode::SchemaMismatch, "run config");
    return with_schema_errors("run config", [&] { return config_from_json(j); });
}

Stats summarize(std::vector<double> values)
{
    if (values.empty()) return {};
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const double median = n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
    return Stats{values.front(), median, values.back()};
}

Aggregate aggregate(const std::vector<RankMetrics>& ranks)
{
    Aggregate a;
    double write_window = 0.0;
    double read_window = 0.0;
    for (const auto& m : ranks) {
        a.bytes_written += m.bytes_written;
        a.bytes_read += m.bytes_read;
        write_window = std::max(write_window, m.write_seconds);
        read_window = std::max(read_window, m.read_seconds);
    }
    a.write_throughput_bytes_per_s = write_window > 0 ? static_cast<double>(a.bytes_written) / write_window : 0.0;
    a.read_throughput_bytes_per_s = read_window > 0 ? static_cast<double>(a.bytes_read) / read_window : 0.0;
    a.wall_time_s = write_window + read_window;
    return a;
}

ReportFormat report_format_from_string(std::string_view s)
{
    if (s == "json") return ReportFormat::Json;
    if (s == "csv") return ReportFormat::Csv;
    throw Error(ErrorCode::InvalidArgument, "unknown report format '" + std::string(s) + "'");
}

std::string report_to_json(const RunReport& r)
{
    ordered j;
    j["schema_version"] = r.schema_version;
    j["run_id"] = r.run_id;
    j["config"] = config_to_json(r.config);
    auto& env = j["environment"];
    env["hostname"] = r.environment.hostname;
    env["timestamp"] = r.environment.timestamp;
    env["kernel"] = r.environment.kernel;
    env["stripe_hint"] = r.environment.stripe_hint;
    env["ring_supported"] = r.environment.ring_supported;
    j["plan_file_count"] = r.plan_file_count;
    j["plan_bytes"] = r.plan_bytes;
    auto& rows = j["per_rank"] = ordered::array();
    for (const auto& m : r.per_rank) rows.push_back(metrics_to_json(m));
    auto& reps = j["repetitions"] = ordered::array();
    for (const auto& a : r.repetitions) reps.push_back(aggregate_to_json(a));
    j["aggregate"] = aggregate_to_json(r.aggregate);
    auto& stats = j["statistics"] = ordered::object();
    for (const auto& [k, s] : r.statistics) stats[k] = ordered{{"min", s.min}, {"median", s.median}, {"max", s.max}};
    auto& v = j["verification"];
    v["objects"] = r.verification.objects;
    v["failed"] = r.verification.failed;
    v["manifest_usable"] = r.verification.manifest_usable;
    v["ok"] = r.verification.ok();
    return j.dump(2) + "\n";
}

RunReport report_from_json(std::string_view text)
{
    const auto j = json::parse_or_throw(text, ErrorCode::SchemaMismatch, "report");
    return with_schema_errors("report", [&] {
        RunReport r;
        r.schema_version = j.at("schema_version").get<std::string>();
        require(r.schema_version == kReportSchema, ErrorCode::SchemaMismatch, "report schema '" + r.schema_version + "'");
        r.run_id = j.at("run_id").get<std::string>();
        r.config = config_from_json(j.at("config"));
        const auto& env = j.at("environment");
        r.environment.hostname = env.at("hostname").get<std::string>();
        r.environment.timestamp = env.at("timestamp").get<std::string>();
        r.environment.kernel = env.at("kernel").get<std::string>();
        r.environment.stripe_hint = env.at("stripe_hint").get<std::string>();
        r.environment.ring_supported = env.at("ring_supported").get<bool>();
        r.plan_file_count = j.at("plan_file_count").get<std::uint64_t>();
        r.plan_bytes = j.at("plan_bytes").get<std::uint64_t>();
        for (const auto& m : j.at("per_rank")) r.per_rank.push_back(metrics_from_json(m));
        for (const auto& a : j.at("repetitions")) r.repetitions.push_back(aggregate_from_json(a));
        r.aggregate = aggregate_from_json(j.at("aggregate"));
        for (const auto& [k, s] : j.at("statistics").items())
            r.statistics[k] = Stats{s.at("min").get<double>(), s.at("median").get<double>(), s.at("max").get<double>()};
        const auto& v = j.at("verification");
        r.verification.objects = v.at("objects").get<std::uint64_t>();
        r.verification.failed = v.at("failed").get<std::uint64_t>();
        r.verification.manifest_usable = v.at("manifest_usable").get<bool>();
        return r;
    });
}

std::string report_to_csv(const RunReport& r)
{
    std::ostringstream out;
    out.precision(17);
    const auto& c = r.config;
    out << "schema_version,run_id,preset,workload,strategy,backend,direct,emulation,alloc,queue_depth,alignment_bytes,"
           "num_ranks,repetition,rank,write_seconds,read_seconds,coordination_seconds,bytes_written,bytes_read,"
           "write_ops,tensor_write_ops,read_ops,tensor_read_ops,file_opens,allocations,reuses,objects,objects_failed";
    for (auto p : kCheckpointPhases) out << ",checkpoint_" << p;
    for (auto p : kRestorePhases) out << ",restore_" << p;
    out << "\n";

    const std::string workload = c.source == WorkloadSource::Synthetic ? "synthetic" : c.profile;
    for (const auto& m : r.per_rank) {
        out << r.schema_version << ',' << csv_field(r.run_id) << ',' << csv_field(c.preset) << ',' << csv_field(workload)
            << ',' << to_string(c.strategy) << ',' << to_string(c.backend) << ',' << (c.direct ? "direct" : "buffered")
            << ',' << to_string(c.emulation) << ',' << to_string(c.alloc) << ',' << c.queue_depth << ','
            << c.alignment_bytes << ',' << c.num_ranks << ',' << m.repetition << ',' << m.rank << ',' << m.write_seconds
            << ',' << m.read_seconds << ',' << m.coordination_seconds << ',' << m.bytes_written << ',' << m.bytes_read
            << ',' << m.write_ops << ',' << m.tensor_write_ops << ',' << m.read_ops << ',' << m.tensor_read_ops << ','
            << m.file_opens << ',' << m.allocations << ',' << m.reuses << ',' << m.objects << ',' << m.objects_failed;
        for (auto p : kCheckpointPhases) out << ',' << m.checkpoint.get(p);
        for (auto p : kRestorePhases) out << ',' << m.restore.get(p);
        out << "\n";
    }
    return out.str();
}

void emit_report(const RunReport& r, ReportFormat format, const std::filesystem::path& path)
{
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    fsutil::write_file_atomic(path, format == ReportFormat::Json ? report_to_json(r) : report_to_csv(r), false);
}

int exit_code_for(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ChecksumMismatch:
    case ErrorCode::ShortManifest:
        return kExitVerification;
    case ErrorCode::RendezvousTimeout:
        return kExitRendezvous;
    case ErrorCode::DirectUnsupported:
    case ErrorCode::PathError:
    case ErrorCode::PermissionDenied:
    case ErrorCode::IoError:
    case ErrorCode::AlignmentViolation:
    case ErrorCode::InvalidHandle:
    case ErrorCode::MissingFile:
        return kExitIo;
    default:
        return kExitFailure;
    }
}

} // namespace ckptbench
