// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/ckpt.hpp"

#include "fs_util.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

namespace ckptbench {

std::string_view to_string(EmulationMode m)
{
    switch (m) {
    case EmulationMode::Batched: return "batched";
    case EmulationMode::PerObjectImmediate: return "per-object";
    case EmulationMode::FragmentedChunks: return "fragmented";
    }
    return "batched";
}

std::string_view to_string(AllocMode m) { return m == AllocMode::Pooled ? "pooled" : "per-object"; }

EmulationMode emulation_mode_from_string(std::string_view s)
{
    if (s == "batched") return EmulationMode::Batched;
    if (s == "per-object" || s == "per-object-immediate") return EmulationMode::PerObjectImmediate;
    if (s == "fragmented" || s == "fragmented-chunks") return EmulationMode::FragmentedChunks;
    throw Error(ErrorCode::InvalidArgument, "unknown emulation mode '" + std::string(s) + "'");
}

AllocMode alloc_mode_from_string(std::string_view s)
{
    if (s == "pooled") return AllocMode::Pooled;
    if (s == "per-object") return AllocMode::PerObject;
    throw Error(ErrorCode::InvalidArgument, "unknown allocation mode '" + std::string(s) + "'");
}

std::string_view to_string(ObjectStatus s)
{
    switch (s) {
    case ObjectStatus::Pass: return "pass";
    case ObjectStatus::ChecksumMismatch: return "checksum-mismatch";
    case ObjectStatus::ReadError: return "read-error";
    case ObjectStatus::MissingFile: return "missing-file";
    }
    return "pass";
}

// ---------------------------------------------------------------------------

void PhaseTimings::add(std::string_view name, double seconds)
{
    for (auto& [n, s] : phases_)
        if (n == name) {
            s += seconds;
            return;
        }
    phases_.emplace_back(std::string(name), seconds);
}

double PhaseTimings::get(std::string_view name) const
{
    for (const auto& [n, s] : phases_)
        if (n == name) return s;
    return 0.0;
}

bool PhaseTimings::has(std::string_view name) const
{
    return std::any_of(phases_.begin(), phases_.end(), [&](const auto& p) { return p.first == name; });
}

double PhaseTimings::sum() const
{
    double total = 0.0;
    for (const auto& p : phases_) total += p.second;
    return total;
}

void PhaseTimer::stop()
{
    if (!timings_) return;
    timings_->add(name_, seconds_between(start_, Clock::now()));
    timings_ = nullptr;
}

double seconds_between(Clock::time_point a, Clock::time_point b)
{
    return std::chrono::duration<double>(b - a).count();
}

// ---------------------------------------------------------------------------

namespace fsutil {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        const int err = errno;
        throw Error(err == ENOENT ? ErrorCode::MissingFile : ErrorCode::IoError,
                    "cannot read " + path.string() + ": " + std::strerror(err));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void sync_directory(const std::filesystem::path& dir)
{
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd < 0) throw Error(ErrorCode::IoError, "open dir " + dir.string() + ": " + std::strerror(errno));
    const int rc = ::fsync(fd);
    const int err = errno;
    ::close(fd);
    if (rc != 0) throw Error(ErrorCode::IoError, "fsync dir " + dir.string() + ": " + std::strerror(err));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text, bool durable)
{
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) {
        const int err = errno;
        throw Error(detail::open_error_code(err, false), "create " + tmp.string() + ": " + std::strerror(err));
    }
    std::size_t done = 0;
    while (done < text.size()) {
        const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) {
            const int err = errno;
            ::close(fd);
            throw Error(ErrorCode::IoError, "write " + tmp.string() + ": " + std::strerror(err));
        }
        done += static_cast<std::size_t>(n);
    }
    if (durable && ::fdatasync(fd) != 0) {
        const int err = errno;
        ::close(fd);
        throw Error(ErrorCode::IoError, "fdatasync " + tmp.string() + ": " + std::strerror(err));
    }
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0)
        throw Error(ErrorCode::IoError, "rename to " + path.string() + ": " + std::strerror(errno));
    if (durable) sync_directory(path.parent_path().empty() ? "." : path.parent_path());
}

} // namespace fsutil

// ---------------------------------------------------------------------------

std::uint64_t Manifest::total_length() const
{
    std::uint64_t total = 0;
    for (const auto& e : entries) total += e.length;
    return total;
}

namespace {

json::ordered entry_to_json(const ManifestEntry& e)
{
    json::ordered j;
    j["object_id"] = e.object_id;
    j["rank"] = e.rank;
    j["shard"] = e.shard;
    j["kind"] = std::string(to_string(e.kind));
    j["length"] = e.length;
    j["checksum"] = json::hex64(e.checksum);
    auto& extents = j["extents"] = json::ordered::array();
    for (const auto& x : e.extents) {
        json::ordered jx;
        jx["file_key"] = x.file_key;
        jx["offset"] = x.offset;
        jx["length"] = x.length;
        jx["padded_length"] = x.padded_length;
        jx["object_offset"] = x.object_offset;
        extents.push_back(std::move(jx));
    }
    return j;
}

ManifestEntry entry_from_json(const json::ordered& j)
{
    ManifestEntry e;
    e.object_id = j.at("object_id").get<std::uint64_t>();
    e.rank = j.at("rank").get<std::uint32_t>();
    e.shard = j.at("shard").get<std::uint32_t>();
    e.kind = object_kind_from_string(j.at("kind").get<std::string>());
    e.length = j.at("length").get<std::uint64_t>();
    e.checksum = json::parse_hex64(j.at("checksum").get<std::string>());
    for (const auto& jx : j.at("extents")) {
        ManifestExtent x;
        x.file_key = jx.at("file_key").get<std::string>();
        x.offset = jx.at("offset").get<std::uint64_t>();
        x.length = jx.at("length").get<std::uint64_t>();
        x.padded_length = jx.at("padded_length").get<std::uint64_t>();
        x.object_offset = jx.at("object_offset").get<std::uint64_t>();
        e.extents.push_back(std::move(x));
    }
    return e;
}

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    ::gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::filesystem::path fragment_path(const std::filesystem::path& dir, std::uint32_t rank)
{
    return dir / (".rank" + std::to_string(rank) + ".entries.json");
}

} // namespace

std::string manifest_to_json(const Manifest& m)
{
    json::ordered j;
    j["schema_version"] = std::string(kManifestSchema);
    j["checkpoint_version"] = m.checkpoint_version;
    j["workload_name"] = m.workload_name;
    j["strategy"] = std::string(to_string(m.strategy.kind));
    j["chunk_bytes"] = m.strategy.chunk_bytes;
    j["alignment_bytes"] = m.alignment_bytes;
    j["direct"] = m.direct;
    j["num_ranks"] = m.num_ranks;
    j["created_at"] = m.created_at;
    j["object_count"] = m.entries.size();
    auto& entries = j["entries"] = json::ordered::array();
    for (const auto& e : m.entries) entries.push_back(entry_to_json(e));
    return j.dump(1) + "\n";
}

Manifest manifest_from_json(std::string_view text)
{
    const auto j = json::parse_or_throw(text, ErrorCode::ShortManifest, "manifest");
    try {
        const auto schema = j.at("schema_version").get<std::string>();
        require(schema == kManifestSchema, ErrorCode::SchemaMismatch, "manifest schema '" + schema + "'");
        Manifest m;
        m.checkpoint_version = j.at("checkpoint_version").get<std::uint64_t>();
        m.workload_name = j.at("workload_name").get<std::string>();
        m.strategy.kind = strategy_kind_from_string(j.at("strategy").get<std::string>());
        m.strategy.chunk_bytes = j.at("chunk_bytes").get<std::uint64_t>();
        m.alignment_bytes = j.at("alignment_bytes").get<std::uint64_t>();
        m.direct = j.at("direct").get<bool>();
        m.num_ranks = j.at("num_ranks").get<std::uint32_t>();
        m.created_at = j.at("created_at").get<std::string>();
        const auto count = j.at("object_count").get<std::size_t>();
        for (const auto& je : j.at("entries")) m.entries.push_back(entry_from_json(je));
        require(m.entries.size() == count, ErrorCode::ShortManifest,
                "manifest lists " + std::to_string(m.entries.size()) + " of " + std::to_string(count) + " objects");
        return m;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::ShortManifest, std::string("manifest: ") + ex.what());
    }
}

Manifest read_manifest(const std::filesystem::path& dir)
{
    return manifest_from_json(fsutil::read_file(dir / kManifestFile));
}

std::vector<ManifestEntry> manifest_entries(const LayoutPlan& plan, std::uint32_t rank,
                                            const std::map<std::uint64_t, std::uint64_t>& checksums)
{
    std::vector<ManifestEntry> out;
    std::map<std::uint64_t, std::size_t> index;
    for (const auto& p : plan.entries) {
        if (p.rank != rank) continue;
        auto [it, fresh] = index.try_emplace(p.object_id, out.size());
        if (fresh) {
            ManifestEntry e;
            e.object_id = p.object_id;
            e.rank = p.rank;
            e.shard = p.shard;
            e.kind = p.kind;
            const auto c = checksums.find(p.object_id);
            require(c != checksums.end(), ErrorCode::InvalidArgument,
                    "no checksum for object " + std::to_string(p.object_id));
            e.checksum = c->second;
            out.push_back(std::move(e));
        }
        ManifestEntry& e = out[it->second];
        e.length += p.length_bytes;
        e.extents.push_back(ManifestExtent{p.file_key, p.offset_bytes, p.length_bytes, p.padded_length_bytes, p.object_offset});
    }
    return out;
}

void write_manifest_fragment(const std::filesystem::path& dir, std::uint32_t rank,
                             const std::vector<ManifestEntry>& entries)
{
    auto j = json::ordered::array();
    for (const auto& e : entries) j.push_back(entry_to_json(e));
    fsutil::write_file_atomic(fragment_path(dir, rank), j.dump(), true);
}

Manifest commit_manifest(const std::filesystem::path& dir, const WorkloadSpec& workload, const LayoutPlan& plan,
                         std::uint64_t checkpoint_version)
{
    Manifest m;
    m.checkpoint_version = checkpoint_version;
    m.workload_name = workload.name;
    m.strategy = plan.strategy;
    m.alignment_bytes = plan.alignment_bytes;
    m.direct = plan.direct;
    m.num_ranks = workload.num_ranks;
    m.created_at = utc_now();

    for (std::uint32_t r = 0; r < workload.num_ranks; ++r) {
        const auto text = fsutil::read_file(fragment_path(dir, r));
        const auto j = json::parse_or_throw(text, ErrorCode::ShortManifest, "manifest fragment of rank " + std::to_string(r));
        for (const auto& je : j) m.entries.push_back(entry_from_json(je));
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.object_id < b.object_id; });
    require(m.entries.size() == workload.objects.size(), ErrorCode::ShortManifest,
            "fragments hold " + std::to_string(m.entries.size()) + " of " + std::to_string(workload.objects.size()) +
                " objects");

    fsutil::write_file_atomic(dir / kManifestFile, manifest_to_json(m), true);
    for (std::uint32_t r = 0; r < workload.num_ranks; ++r) std::filesystem::remove(fragment_path(dir, r));
    return m;
}

} // namespace ckptbench
