// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/ckpt.hpp"

#include "fs_util.hpp"

#include <algorithm>
#include <cerrno>
#include <climits>
#include <cstring>
#include <map>
#include <optional>
#include <set>

#include <fcntl.h>
#include <unistd.h>

namespace ckptbench {

namespace fs = std::filesystem;

std::size_t WriteSchedule::tensor_requests() const
{
    return static_cast<std::size_t>(
        std::count_if(requests.begin(), requests.end(), [](const ScheduledRequest& r) { return r.tensor_data; }));
}

WriteSchedule build_write_schedule(const LayoutPlan& plan, std::uint32_t rank)
{
    WriteSchedule s;
    std::vector<std::uint64_t> order;
    std::map<std::uint64_t, std::uint64_t> span;
    for (const auto& e : plan.entries) {
        if (e.rank != rank) continue;
        if (span.find(e.object_id) == span.end()) order.push_back(e.object_id);
        span[e.object_id] += e.padded_length_bytes;
    }
    for (const auto id : order) {
        s.object_buffer_offset[id] = s.buffer_bytes;
        s.buffer_bytes += span[id];
    }

    for (const auto& e : plan.entries) {
        if (e.rank != rank) continue;
        const std::uint64_t buf = s.object_buffer_offset[e.object_id] + e.object_offset;
        const bool tensor = e.kind == ObjectKind::Tensor;
        if (!tensor && !s.requests.empty()) {
            auto& last = s.requests.back();
            if (!last.tensor_data && last.file_key == e.file_key && last.file_offset + last.length == e.offset_bytes &&
                last.buffer_offset + last.length == buf) {
                last.length += e.padded_length_bytes;
                last.object_ids.push_back(e.object_id);
                continue;
            }
        }
        s.requests.push_back(ScheduledRequest{e.file_key, e.offset_bytes, buf, e.padded_length_bytes, tensor, {e.object_id}});
    }
    return s;
}

fs::path version_dir(const fs::path& root, std::uint64_t version)
{
    return root / ("ckpt-" + std::to_string(version));
}

void prepare_version_dir(const LayoutPlan& plan, const fs::path& dir)
{
    std::error_code ec;
    fs::remove_all(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot clear " + dir.string() + ": " + ec.message());
    fs::create_directories(dir / std::string(to_string(plan.strategy.kind)), ec);
    if (ec) throw Error(ErrorCode::PathError, "cannot create " + dir.string() + ": " + ec.message());
    fsutil::sync_directory(dir.parent_path().empty() ? fs::path(".") : dir.parent_path());

    if (plan.strategy.kind == StrategyKind::SingleSharedFile) {
        EngineConfig buffered;
        buffered.direct = false;
        for (const auto& [key, size] : plan.per_file_total) open_file(dir / key, OpenMode::WriteCreate, buffered);
    }
}

namespace {

void check_plan_matches(const LayoutPlan& plan, const EngineConfig& config)
{
    require(plan.direct == config.direct, ErrorCode::InvalidArgument,
            "layout plan and engine disagree on direct mode");
    require(!plan.direct || plan.alignment_bytes % config.alignment_bytes == 0, ErrorCode::InvalidAlignment,
            "layout alignment " + std::to_string(plan.alignment_bytes) + " is not a multiple of the engine alignment " +
                std::to_string(config.alignment_bytes));
}

void throw_on_failure(const std::vector<CompletionRecord>& done, std::string_view what)
{
    for (const auto& c : done)
        if (!c.ok())
            throw Error(ErrorCode::IoError, std::string(what) + " failed: " + c.error->message() + " (" +
                                                std::to_string(c.bytes_transferred) + " bytes transferred)");
}

} // namespace

struct CheckpointWriter::Impl {
    Impl(const WorkloadSpec& workload, const LayoutPlan& plan_in, std::uint32_t rank_in, const EngineConfig& config_in,
         EmulationMode mode_in)
        : plan(plan_in), rank(rank_in), config(config_in), mode(mode_in)
    {
        check_plan_matches(plan, config);
        require(mode != EmulationMode::FragmentedChunks || plan.strategy.kind == StrategyKind::FixedChunkFragmentation,
                ErrorCode::InvalidArgument, "fragmented emulation needs a fragmented-chunks layout");
        sched = build_write_schedule(plan, rank);
        for (const auto& o : workload.objects)
            if (o.rank == rank) objects[o.object_id] = o;
        require(objects.size() == sched.object_buffer_offset.size(), ErrorCode::InvalidArgument,
                "layout plan does not match the workload of rank " + std::to_string(rank));
        staging = AlignedBuffer(sched.buffer_bytes, plan.alignment_bytes);
        engine = make_engine(config);
    }

    RankCheckpoint write(const fs::path& dir);

    LayoutPlan plan;
    std::uint32_t rank;
    EngineConfig config;
    EmulationMode mode;
    WriteSchedule sched;
    std::map<std::uint64_t, ObjectSpec> objects;
    AlignedBuffer staging;
    std::unique_ptr<IoEngine> engine;
};

RankCheckpoint CheckpointWriter::Impl::write(const fs::path& dir)
{
    const auto t_begin = Clock::now();
    RankCheckpoint out;
    out.rank = rank;
    for (auto name : kCheckpointPhases)
        if (name != "manifest") out.timings.touch(name);

    engine->reset_counters();
    std::map<std::uint64_t, std::uint64_t> checksums;
    std::map<std::string, FileHandle> files;
    const OpenMode open_mode =
        plan.strategy.kind == StrategyKind::SingleSharedFile ? OpenMode::WriteShared : OpenMode::WriteCreate;

    auto fill = [&](std::uint64_t id) {
        if (checksums.count(id)) return;
        const ObjectSpec& o = objects.at(id);
        const auto span = staging.span().subspan(sched.object_buffer_offset.at(id), o.size_bytes);
        checksums[id] = fill_buffer(span, o.content_seed);
    };
    auto file_for = [&](const std::string& key) -> FileHandle& {
        auto it = files.find(key);
        if (it != files.end()) return it->second;
        const fs::path path = dir / key;
        if (!fs::exists(path.parent_path())) fs::create_directories(path.parent_path());
        ++out.stats.file_opens;
        return files.emplace(key, open_file(path, open_mode, config)).first->second;
    };
    auto request_for = [&](const ScheduledRequest& r, const FileHandle& f) {
        return IoRequest::write(f, r.file_offset, staging.span().subspan(r.buffer_offset, r.length), 0);
    };

    {
        PhaseTimer t(out.timings, "serialize");
        for (const auto& r : sched.requests)
            if (!r.tensor_data)
                for (auto id : r.object_ids) fill(id);
    }

    switch (mode) {
    case EmulationMode::Batched: {
        {
            PhaseTimer t(out.timings, "staging");
            for (const auto& r : sched.requests)
                if (r.tensor_data) fill(r.object_ids.front());
        }
        PhaseTimer t(out.timings, "flush");
        std::vector<IoRequest> batch;
        batch.reserve(sched.requests.size());
        for (std::size_t i = 0; i < sched.requests.size(); ++i) {
            batch.push_back(request_for(sched.requests[i], file_for(sched.requests[i].file_key)));
            batch.back().tag = i;
        }
        engine->submit_batch(batch);
        throw_on_failure(engine->drain(), "checkpoint write");
        break;
    }
    case EmulationMode::PerObjectImmediate:
    case EmulationMode::FragmentedChunks: {
        const bool fragmented = mode == EmulationMode::FragmentedChunks;
        for (const auto& r : sched.requests) {
            if (r.tensor_data) {
                PhaseTimer t(out.timings, "staging");
                fill(r.object_ids.front());
            }
            PhaseTimer t(out.timings, "flush");
            engine->submit(request_for(r, file_for(r.file_key)));
            throw_on_failure(engine->drain(), "checkpoint write of " + r.file_key);
            if (fragmented) files.erase(r.file_key);
        }
        break;
    }
    }

    {
        PhaseTimer t(out.timings, "sync");
        if (config.sync_on_close) {
            for (auto& [key, f] : files) f.sync();
            if (mode == EmulationMode::FragmentedChunks) {
                const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
                if (fd < 0 || ::syncfs(fd) != 0) {
                    const int err = errno;
                    if (fd >= 0) ::close(fd);
                    throw Error(ErrorCode::IoError, "syncfs(" + dir.string() + "): " + std::strerror(err));
                }
                ::close(fd);
            }
        }
        files.clear();
    }

    const auto& c = engine->counters();
    out.stats.bytes_written = c.bytes_written;
    out.stats.write_ops = c.write_requests;
    out.stats.tensor_write_ops = sched.tensor_requests();
    out.entries = manifest_entries(plan, rank, checksums);
    out.timings.wall_seconds = seconds_between(t_begin, Clock::now());
    return out;
}

CheckpointWriter::CheckpointWriter(const WorkloadSpec& workload, const LayoutPlan& plan, std::uint32_t rank,
                                   const EngineConfig& config, EmulationMode mode)
    : impl_(std::make_unique<Impl>(workload, plan, rank, config, mode))
{
}

CheckpointWriter::~CheckpointWriter() = default;
CheckpointWriter::CheckpointWriter(CheckpointWriter&&) noexcept = default;
CheckpointWriter& CheckpointWriter::operator=(CheckpointWriter&&) noexcept = default;

RankCheckpoint CheckpointWriter::write(const fs::path& dir) { return impl_->write(dir); }

const WriteSchedule& CheckpointWriter::schedule() const { return impl_->sched; }

RankCheckpoint checkpoint_rank(const WorkloadSpec& workload, const LayoutPlan& plan, std::uint32_t rank,
                               const fs::path& dir, const EngineConfig& config, EmulationMode mode)
{
    return CheckpointWriter(workload, plan, rank, config, mode).write(dir);
}

CheckpointResult checkpoint(const WorkloadSpec& workload, const LayoutPlan& plan, const fs::path& dir,
                            const EngineConfig& config, EmulationMode mode, std::uint64_t checkpoint_version,
                            const std::function<void()>& before_commit)
{
    CheckpointResult result;
    prepare_version_dir(plan, dir);
    for (std::uint32_t r = 0; r < workload.num_ranks; ++r) {
        result.ranks.push_back(checkpoint_rank(workload, plan, r, dir, config, mode));
        write_manifest_fragment(dir, r, result.ranks.back().entries);
    }
    if (before_commit) before_commit();
    const auto t0 = Clock::now();
    result.manifest = commit_manifest(dir, workload, plan, checkpoint_version);
    const double dt = seconds_between(t0, Clock::now());
    result.ranks.front().timings.add("manifest", dt);
    result.ranks.front().timings.wall_seconds += dt;
    return result;
}

// ---------------------------------------------------------------------------
// Restore

std::size_t RankRestore::passed() const
{
    return static_cast<std::size_t>(
        std::count_if(objects.begin(), objects.end(), [](const ObjectResult& o) { return o.status == ObjectStatus::Pass; }));
}

std::size_t VerificationReport::passed() const
{
    return static_cast<std::size_t>(
        std::count_if(objects.begin(), objects.end(), [](const ObjectResult& o) { return o.status == ObjectStatus::Pass; }));
}

namespace {

/// Part of a read request that lands in one object.
struct Slice {
    std::size_t object = 0;          // index into the rank's object list
    std::uint64_t object_offset = 0;  // where in the object (padded coordinates)
    std::uint64_t request_offset = 0;  // where in the request
    std::uint64_t length = 0;         // padded length carried by the request
};

struct ReadPiece {
    std::string file_key;
    std::uint64_t file_offset = 0;
    std::uint64_t length = 0;
    std::vector<Slice> slices;
};

struct ExtentRef {
    std::size_t object;
    const ManifestExtent* extent;
};

/// Groups extents into maximal runs that are contiguous in one file, then
/// cuts each run into pieces of at most `span` bytes (and at most
/// `max_slices` slices).
std::vector<ReadPiece> coalesce(std::vector<ExtentRef> refs, std::uint64_t span, std::size_t max_slices)
{
    std::sort(refs.begin(), refs.end(), [](const ExtentRef& a, const ExtentRef& b) {
        if (a.extent->file_key != b.extent->file_key) return a.extent->file_key < b.extent->file_key;
        return a.extent->offset < b.extent->offset;
    });
    std::vector<ReadPiece> pieces;
    for (const auto& ref : refs) {
        const auto& x = *ref.extent;
        std::uint64_t done = 0;
        while (done < x.padded_length) {
            const std::uint64_t at = x.offset + done;
            ReadPiece* p = pieces.empty() ? nullptr : &pieces.back();
            if (!p || p->file_key != x.file_key || p->file_offset + p->length != at || p->length >= span ||
                p->slices.size() >= max_slices) {
                pieces.push_back(ReadPiece{x.file_key, at, 0, {}});
                p = &pieces.back();
            }
            const std::uint64_t take = std::min(x.padded_length - done, span - p->length);
            p->slices.push_back(Slice{ref.object, x.object_offset + done, p->length, take});
            p->length += take;
            done += take;
        }
    }
    return pieces;
}

class RankRestorer {
public:
    RankRestorer(const fs::path& dir, std::uint32_t rank, const EngineConfig& config, const RestoreOptions& options)
        : dir_(dir), config_(config), options_(options)
    {
        config_.validate();
        out_.rank = rank;
        manifest_ = read_manifest(dir_);
        check_manifest();
        prepare();
    }

    RankRestore run()
    {
        const auto t_begin = Clock::now();
        for (auto name : kRestorePhases) out_.timings.touch(name);
        {
            PhaseTimer t(out_.timings, "manifest_read");
            require(read_manifest(dir_) == manifest_, ErrorCode::InvalidArgument,
                    "manifest of " + dir_.string() + " changed after the restore was prepared");
        }
        ++out_.stats.read_ops;
        ++out_.stats.file_opens;

        read_lean();
        if (options_.mode == EmulationMode::Batched)
            read_tensors_batched();
        else
            read_tensors_one_by_one();

        {
            PhaseTimer t(out_.timings, "verify");
            for (std::size_t i = 0; i < objects_.size(); ++i) {
                auto& r = out_.objects[i];
                if (r.status != ObjectStatus::Pass) continue;
                const auto* e = objects_[i];
                const auto sum = fnv1a(dest_.span().subspan(dest_offset_[i], e->length));
                if (sum != e->checksum) {
                    r.status = ObjectStatus::ChecksumMismatch;
                    r.detail = "checksum mismatch for object " + std::to_string(e->object_id);
                }
            }
        }

        const auto& c = engine_->counters();
        out_.stats.read_ops += c.read_requests;
        out_.stats.bytes_read = c.bytes_read;
        if (pool_) {
            const auto pc = pool_->counters();
            out_.stats.allocations = pc.allocations;
            out_.stats.reuses = pc.reuses;
        } else {
            out_.stats.allocations = per_object_allocations_;
        }
        out_.timings.wall_seconds = seconds_between(t_begin, Clock::now());
        return std::move(out_);
    }

private:
    void check_manifest()
    {
        require(manifest_.direct == config_.direct, ErrorCode::InvalidArgument,
                "checkpoint was written with direct=" + std::string(manifest_.direct ? "true" : "false") +
                    " but the engine has direct=" + (config_.direct ? "true" : "false"));
        require(!config_.direct || manifest_.alignment_bytes % config_.alignment_bytes == 0, ErrorCode::InvalidAlignment,
                "checkpoint alignment does not satisfy the engine alignment");
        for (const auto& e : manifest_.entries)
            if (e.rank == out_.rank) objects_.push_back(&e);
    }

    std::uint64_t unit() const { return manifest_.direct ? manifest_.alignment_bytes : 1; }

    std::uint64_t padded_span(const ManifestEntry& e) const
    {
        std::uint64_t n = 0;
        for (const auto& x : e.extents) n += x.padded_length;
        return n;
    }

    /// All buffers and the engine are created before any timed read.
    void prepare()
    {
        std::uint64_t total = 0;
        for (const auto* e : objects_) {
            dest_offset_.push_back(total);
            total += e->length;
            out_.objects.push_back(ObjectResult{e->object_id, e->rank, ObjectStatus::Pass, {}});
        }
        dest_ = AlignedBuffer(total, 64);

        const std::uint64_t align = std::max<std::uint64_t>(manifest_.alignment_bytes, 512);
        std::uint64_t needed = 0;
        std::uint64_t all = 0;
        for (const auto& group : lean_groups()) needed = std::max(needed, group.length);
        for (const auto* e : objects_) {
            all += padded_span(*e);
            if (options_.mode != EmulationMode::Batched && e->kind == ObjectKind::Tensor)
                for (const auto& x : e->extents) needed = std::max(needed, x.padded_length);
        }
        span_ = round_up(std::max<std::uint64_t>(std::min<std::uint64_t>(options_.pool_region_bytes, all), 1), align);
        span_ = std::max(span_, round_up(std::max<std::uint64_t>(needed, 1), align));
        if (options_.alloc == AllocMode::Pooled) {
            pool_.emplace(span_, std::max<std::size_t>(options_.pool_regions, 1), align);
            pool_->warm_up();
            out_.pool_region_bytes = span_;
            out_.pool_regions = pool_->region_count();
        }
        engine_ = make_engine(config_);
    }

    std::vector<ReadPiece> lean_groups() const
    {
        std::vector<ReadPiece> groups;
        std::map<std::uint32_t, std::vector<ExtentRef>> by_shard;
        for (std::size_t i = 0; i < objects_.size(); ++i)
            if (objects_[i]->kind != ObjectKind::Tensor)
                for (const auto& x : objects_[i]->extents) by_shard[objects_[i]->shard].push_back({i, &x});
        for (auto& [shard, refs] : by_shard) {
            auto pieces = coalesce(refs, ~0ull >> 1, IOV_MAX);
            groups.insert(groups.end(), pieces.begin(), pieces.end());
        }
        return groups;
    }

    /// Null (and the affected objects marked) when the file cannot be opened.
    const FileHandle* file(const ReadPiece& p)
    {
        auto it = files_.find(p.file_key);
        if (it == files_.end()) {
            std::optional<FileHandle> h;
            std::string why;
            try {
                h = open_file(dir_ / p.file_key, OpenMode::ReadOnly, config_);
                ++out_.stats.file_opens;
            } catch (const Error& ex) {
                if (ex.code() == ErrorCode::DirectUnsupported) throw;
                why = ex.what();
            }
            it = files_.emplace(p.file_key, std::move(h)).first;
            if (!it->second) missing_[p.file_key] = why;
        }
        if (!it->second) {
            for (const auto& s : p.slices) fail(s.object, ObjectStatus::MissingFile, missing_[p.file_key]);
            return nullptr;
        }
        return &*it->second;
    }

    void fail(std::size_t object, ObjectStatus status, const std::string& detail)
    {
        auto& r = out_.objects[object];
        if (r.status != ObjectStatus::Pass) return;
        r.status = status;
        r.detail = detail;
    }

    /// Marks objects whose bytes lie beyond what a failed read delivered.
    void apply_completion(const ReadPiece& p, const CompletionRecord& c)
    {
        if (c.ok()) return;
        for (const auto& s : p.slices)
            if (s.request_offset + s.length > c.bytes_transferred)
                fail(s.object, ObjectStatus::ReadError,
                     p.file_key + "@" + std::to_string(p.file_offset) + ": " + c.error->message());
    }

    /// Copies the real (unpadded) bytes of each slice from `src` into the
    /// destination regions.
    void copy_out(const ReadPiece& p, const std::byte* src)
    {
        for (const auto& s : p.slices) {
            const auto* e = objects_[s.object];
            if (s.object_offset >= e->length) continue;
            const std::uint64_t n = std::min(s.length, e->length - s.object_offset);
            std::memcpy(dest_.data() + dest_offset_[s.object] + s.object_offset, src + s.request_offset, n);
        }
    }

    /// One request at a time: read, wait, copy.
    void read_pieces_serially(const std::vector<ReadPiece>& pieces, std::string_view phase, bool tensor)
    {
        for (const auto& p : pieces) {
            auto t0 = Clock::now();
            const FileHandle* f = file(p);
            if (!f) {
                out_.timings.add(phase, seconds_between(t0, Clock::now()));
                continue;
            }
            if (pool_) {
                PooledRegion region = pool_->acquire();
                engine_->submit(IoRequest::read(*f, p.file_offset, region.span().first(p.length), 0));
                const auto done = engine_->drain();
                out_.timings.add(phase, seconds_between(t0, Clock::now()));
                apply_completion(p, done.front());
                PhaseTimer t(out_.timings, "staging");
                copy_out(p, region.data());
            } else {
                out_.timings.add(phase, seconds_between(t0, Clock::now()));
                {
                    PhaseTimer t(out_.timings, "alloc");
                    for (const auto& s : p.slices)
                        if (!buffers_.count(s.object)) {
                            buffers_.emplace(s.object, AlignedBuffer(padded_span(*objects_[s.object]), unit_align()));
                            ++per_object_allocations_;
                        }
                }
                t0 = Clock::now();
                engine_->submit(per_object_request(*f, p));
                const auto done = engine_->drain();
                out_.timings.add(phase, seconds_between(t0, Clock::now()));
                apply_completion(p, done.front());
                PhaseTimer t(out_.timings, "staging");
                flush_complete_objects(p);
            }
            if (tensor) ++out_.stats.tensor_read_ops;
        }
    }

    std::uint64_t unit_align() const { return std::max<std::uint64_t>(manifest_.alignment_bytes, 512); }

    IoRequest per_object_request(const FileHandle& f, const ReadPiece& p)
    {
        IoRequest r;
        r.file = &f;
        r.op = IoOp::Read;
        r.offset_bytes = p.file_offset;
        for (const auto& s : p.slices) r.segments.push_back(buffers_.at(s.object).span().subspan(s.object_offset, s.length));
        return r;
    }

    /// Copies objects whose every extent has been read out of their private
    /// buffers and frees them.
    void flush_complete_objects(const ReadPiece& p)
    {
        for (const auto& s : p.slices) {
            auto& got = received_[s.object];
            got += s.length;
            if (got < padded_span(*objects_[s.object])) continue;
            auto it = buffers_.find(s.object);
            std::memcpy(dest_.data() + dest_offset_[s.object], it->second.data(), objects_[s.object]->length);
            buffers_.erase(it);
        }
    }

    void read_lean() { read_pieces_serially(lean_groups(), "lean_read", false); }

    std::vector<ExtentRef> tensor_refs() const
    {
        std::vector<ExtentRef> refs;
        for (std::size_t i = 0; i < objects_.size(); ++i)
            if (objects_[i]->kind == ObjectKind::Tensor)
                for (const auto& x : objects_[i]->extents) refs.push_back({i, &x});
        return refs;
    }

    void read_tensors_one_by_one()
    {
        std::vector<ReadPiece> pieces;
        for (std::size_t i = 0; i < objects_.size(); ++i) {
            if (objects_[i]->kind != ObjectKind::Tensor) continue;
            for (const auto& x : objects_[i]->extents)
                pieces.push_back(ReadPiece{x.file_key, x.offset, x.padded_length, {Slice{i, x.object_offset, 0, x.padded_length}}});
        }
        read_pieces_serially(pieces, "tensor_read", true);
    }

    void read_tensors_batched()
    {
        auto pieces = coalesce(tensor_refs(), span_, IOV_MAX);
        if (pool_)
            batched_into_pool(pieces);
        else
            batched_into_objects(pieces);
    }

    void batched_into_objects(const std::vector<ReadPiece>& pieces)
    {
        {
            PhaseTimer t(out_.timings, "alloc");
            for (std::size_t i = 0; i < objects_.size(); ++i)
                if (objects_[i]->kind == ObjectKind::Tensor) {
                    buffers_.emplace(i, AlignedBuffer(padded_span(*objects_[i]), unit_align()));
                    ++per_object_allocations_;
                }
        }
        {
            PhaseTimer t(out_.timings, "tensor_read");
            std::vector<IoRequest> batch;
            std::vector<std::size_t> index;
            for (std::size_t k = 0; k < pieces.size(); ++k) {
                const FileHandle* f = file(pieces[k]);
                if (!f) continue;
                batch.push_back(per_object_request(*f, pieces[k]));
                batch.back().tag = k;
            }
            engine_->submit_batch(batch);
            out_.stats.tensor_read_ops += batch.size();
            for (const auto& c : engine_->drain()) apply_completion(pieces[c.tag], c);
        }
        PhaseTimer t(out_.timings, "staging");
        for (const auto& p : pieces) flush_complete_objects(p);
    }

    void batched_into_pool(const std::vector<ReadPiece>& pieces)
    {
        const auto t0 = Clock::now();
        double copying = 0.0;
        std::map<std::uint64_t, PooledRegion> leased;
        std::size_t next = 0;
        while (next < pieces.size() || !leased.empty()) {
            std::vector<IoRequest> batch;
            while (next < pieces.size() && leased.size() + batch.size() < pool_->region_count()) {
                const std::size_t k = next++;
                const FileHandle* f = file(pieces[k]);
                if (!f) continue;
                auto region = pool_->try_acquire();
                if (!region) throw std::logic_error("buffer pool exhausted below its region count");
                batch.push_back(IoRequest::read(*f, pieces[k].file_offset, region->span().first(pieces[k].length), k));
                leased.emplace(k, std::move(*region));
            }
            if (!batch.empty()) {
                engine_->submit_batch(batch);
                out_.stats.tensor_read_ops += batch.size();
            }
            if (leased.empty()) continue;
            for (const auto& c : engine_->await_completions(1)) {
                const auto c0 = Clock::now();
                const ReadPiece& p = pieces[c.tag];
                apply_completion(p, c);
                auto it = leased.find(c.tag);
                copy_out(p, it->second.data());
                leased.erase(it);
                copying += seconds_between(c0, Clock::now());
            }
        }
        out_.timings.add("tensor_read", seconds_between(t0, Clock::now()) - copying);
        out_.timings.add("staging", copying);
    }

    fs::path dir_;
    EngineConfig config_;
    RestoreOptions options_;
    RankRestore out_;
    Manifest manifest_;
    std::vector<const ManifestEntry*> objects_;
    std::vector<std::uint64_t> dest_offset_;
    AlignedBuffer dest_;
    std::uint64_t span_ = 0;
    std::optional<BufferPool> pool_;
    std::unique_ptr<IoEngine> engine_;
    std::map<std::string, std::optional<FileHandle>> files_;
    std::map<std::string, std::string> missing_;
    std::map<std::size_t, AlignedBuffer> buffers_;
    std::map<std::size_t, std::uint64_t> received_;
    std::uint64_t per_object_allocations_ = 0;
};

} // namespace

struct RestoreReader::Impl {
    Impl(const fs::path& dir, std::uint32_t rank, const EngineConfig& config, const RestoreOptions& options)
        : restorer(dir, rank, config, options) {}
    RankRestorer restorer;
    bool used = false;
};

RestoreReader::RestoreReader(const fs::path& dir, std::uint32_t rank, const EngineConfig& config,
                             const RestoreOptions& options)
    : impl_(std::make_unique<Impl>(dir, rank, config, options))
{
}

RestoreReader::~RestoreReader() = default;
RestoreReader::RestoreReader(RestoreReader&&) noexcept = default;
RestoreReader& RestoreReader::operator=(RestoreReader&&) noexcept = default;

RankRestore RestoreReader::read()
{
    require(!impl_->used, ErrorCode::InvalidArgument, "a RestoreReader runs once");
    impl_->used = true;
    return impl_->restorer.run();
}

RankRestore restore_rank(const fs::path& dir, std::uint32_t rank, const EngineConfig& config, const RestoreOptions& options)
{
    return RestoreReader(dir, rank, config, options).read();
}

std::vector<RankRestore> restore(const fs::path& dir, const EngineConfig& config, const RestoreOptions& options)
{
    const Manifest m = read_manifest(dir);
    std::vector<RankRestore> out;
    for (std::uint32_t r = 0; r < m.num_ranks; ++r) out.push_back(restore_rank(dir, r, config, options));
    return out;
}

// ---------------------------------------------------------------------------

VerificationReport verify_checkpoint(const fs::path& dir)
{
    VerificationReport report;
    Manifest m;
    try {
        m = read_manifest(dir);
    } catch (const Error& ex) {
        report.reason = ex.what();
        return report;
    }
    report.usable = true;

    std::map<std::string, int> fds;
    std::vector<std::byte> buf;
    for (const auto& e : m.entries) {
        ObjectResult r{e.object_id, e.rank, ObjectStatus::Pass, {}};
        auto extents = e.extents;
        std::sort(extents.begin(), extents.end(),
                  [](const ManifestExtent& a, const ManifestExtent& b) { return a.object_offset < b.object_offset; });
        std::uint64_t sum = kFnvOffsetBasis;
        for (const auto& x : extents) {
            auto it = fds.find(x.file_key);
            if (it == fds.end()) it = fds.emplace(x.file_key, ::open((dir / x.file_key).c_str(), O_RDONLY | O_CLOEXEC)).first;
            if (it->second < 0) {
                r.status = ObjectStatus::MissingFile;
                r.detail = x.file_key;
                break;
            }
            buf.resize(x.length);
            std::uint64_t got = 0;
            while (got < x.length) {
                const ssize_t n = ::pread(it->second, buf.data() + got, x.length - got, static_cast<off_t>(x.offset + got));
                if (n < 0 && errno == EINTR) continue;
                if (n <= 0) break;
                got += static_cast<std::uint64_t>(n);
            }
            if (got < x.length) {
                r.status = ObjectStatus::ReadError;
                r.detail = "short read of " + x.file_key + " at " + std::to_string(x.offset + got);
                break;
            }
            sum = fnv1a(buf, sum);
        }
        if (r.status == ObjectStatus::Pass && sum != e.checksum) {
            r.status = ObjectStatus::ChecksumMismatch;
            r.detail = "checksum mismatch";
        }
        report.objects.push_back(std::move(r));
    }
    for (auto& [k, fd] : fds)
        if (fd >= 0) ::close(fd);
    return report;
}

void drop_page_cache(const fs::path& dir)
{
    std::error_code ec;
    for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::recursive_directory_iterator();
         it.increment(ec)) {
        if (!it->is_regular_file()) continue;
        const int fd = ::open(it->path().c_str(), O_RDONLY | O_CLOEXEC);
        if (fd < 0) continue;
        ::fdatasync(fd);
        ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
        ::close(fd);
    }
}

} // namespace ckptbench
