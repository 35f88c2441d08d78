// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/engine.hpp"

#include "ckptbench/layout.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <utility>

#include <fcntl.h>
#include <limits.h>
#include <unistd.h>

namespace ckptbench {

std::string_view to_string(Backend b) { return b == Backend::Ring ? "ring" : "blocking"; }

Backend backend_from_string(std::string_view s)
{
    if (s == "ring" || s == "io_uring" || s == "uring") return Backend::Ring;
    if (s == "blocking" || s == "posix") return Backend::Blocking;
    throw Error(ErrorCode::InvalidArgument, "unknown backend '" + std::string(s) + "'");
}

void EngineConfig::validate() const
{
    require(queue_depth >= 1, ErrorCode::InvalidArgument, "queue depth must be >= 1");
    if (direct)
        require(is_power_of_two(alignment_bytes) && alignment_bytes >= 512, ErrorCode::InvalidAlignment,
                "direct mode needs a power-of-two alignment >= 512, got " + std::to_string(alignment_bytes));
}

// ---------------------------------------------------------------------------

void AlignedBuffer::Free::operator()(std::byte* p) const noexcept { std::free(p); }

AlignedBuffer::AlignedBuffer(std::size_t size, std::size_t alignment)
{
    require(is_power_of_two(alignment), ErrorCode::InvalidAlignment, "buffer alignment must be a power of two");
    const std::size_t align = std::max(alignment, sizeof(void*));
    void* p = nullptr;
    if (int rc = ::posix_memalign(&p, align, std::max<std::size_t>(size, 1)); rc != 0)
        throw Error(ErrorCode::IoError, "posix_memalign(" + std::to_string(size) + "): " + std::strerror(rc));
    std::memset(p, 0, size);
    data_.reset(static_cast<std::byte*>(p));
    size_ = size;
}

// ---------------------------------------------------------------------------

PooledRegion::PooledRegion(PooledRegion&& o) noexcept
    : pool_(std::exchange(o.pool_, nullptr)), index_(o.index_), region_(o.region_) {}

PooledRegion& PooledRegion::operator=(PooledRegion&& o) noexcept
{
    if (this != &o) {
        release();
        pool_ = std::exchange(o.pool_, nullptr);
        index_ = o.index_;
        region_ = o.region_;
    }
    return *this;
}

PooledRegion::~PooledRegion() { release(); }

void PooledRegion::release()
{
    if (pool_) std::exchange(pool_, nullptr)->give_back(index_);
}

BufferPool::BufferPool(std::size_t region_size, std::size_t region_count, std::size_t alignment)
    : region_size_(region_size), region_count_(region_count), alignment_(alignment)
{
    require(region_count >= 1 && region_size >= 1, ErrorCode::InvalidArgument, "buffer pool needs >= 1 region of >= 1 byte");
    require(is_power_of_two(alignment), ErrorCode::InvalidAlignment, "pool alignment must be a power of two");
    require(region_size % alignment == 0, ErrorCode::InvalidArgument, "pool region size must be a multiple of the alignment");
    regions_.reserve(region_count);
}

PooledRegion BufferPool::take_locked()
{
    std::size_t index;
    if (!free_.empty()) {
        index = free_.back();
        free_.pop_back();
        ++counters_.reuses;
    } else {
        index = regions_.size();
        regions_.emplace_back(region_size_, alignment_);
        ++counters_.allocations;
    }
    ++in_use_;
    return PooledRegion(this, index, regions_[index].span());
}

PooledRegion BufferPool::acquire()
{
    std::unique_lock lock(mutex_);
    available_.wait(lock, [&] { return in_use_ < region_count_; });
    return take_locked();
}

std::optional<PooledRegion> BufferPool::try_acquire()
{
    std::lock_guard lock(mutex_);
    if (in_use_ >= region_count_) return std::nullopt;
    return take_locked();
}

void BufferPool::release(PooledRegion& region)
{
    require(!region || region.pool_ == this, ErrorCode::InvalidArgument, "region belongs to another pool");
    region.release();
}

void BufferPool::give_back(std::size_t index)
{
    {
        std::lock_guard lock(mutex_);
        free_.push_back(index);
        --in_use_;
    }
    available_.notify_one();
}

void BufferPool::warm_up()
{
    std::lock_guard lock(mutex_);
    while (regions_.size() < region_count_) {
        free_.insert(free_.begin(), regions_.size());
        regions_.emplace_back(region_size_, alignment_);
        ++counters_.allocations;
    }
}

std::size_t BufferPool::in_use() const
{
    std::lock_guard lock(mutex_);
    return in_use_;
}

AllocationCounters BufferPool::counters() const
{
    std::lock_guard lock(mutex_);
    return counters_;
}

// ---------------------------------------------------------------------------

FileHandle::FileHandle(FileHandle&& o) noexcept
    : fd_(std::exchange(o.fd_, -1)), mode_(o.mode_), direct_(o.direct_), path_(std::move(o.path_)) {}

FileHandle& FileHandle::operator=(FileHandle&& o) noexcept
{
    if (this != &o) {
        close();
        fd_ = std::exchange(o.fd_, -1);
        mode_ = o.mode_;
        direct_ = o.direct_;
        path_ = std::move(o.path_);
    }
    return *this;
}

FileHandle::~FileHandle() { close(); }

void FileHandle::sync()
{
    require(is_open(), ErrorCode::InvalidHandle, "sync on closed handle");
    if (::fdatasync(fd_) != 0)
        throw Error(ErrorCode::IoError, "fdatasync(" + path_.string() + "): " + std::strerror(errno));
}

void FileHandle::close()
{
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
}

namespace detail {

ErrorCode open_error_code(int err, bool direct)
{
    switch (err) {
    case EINVAL:
        return direct ? ErrorCode::DirectUnsupported : ErrorCode::InvalidArgument;
    case ENOENT:
    case ENOTDIR:
    case EISDIR:
    case ENAMETOOLONG:
    case ELOOP:
        return ErrorCode::PathError;
    case EACCES:
    case EPERM:
    case EROFS:
        return ErrorCode::PermissionDenied;
    default:
        return ErrorCode::IoError;
    }
}

} // namespace detail

FileHandle open_file(const std::filesystem::path& path, OpenMode mode, const EngineConfig& config)
{
    int flags = O_CLOEXEC;
    switch (mode) {
    case OpenMode::ReadOnly: flags |= O_RDONLY; break;
    case OpenMode::WriteCreate: flags |= O_WRONLY | O_CREAT | O_TRUNC; break;
    case OpenMode::WriteShared: flags |= O_WRONLY | O_CREAT; break;
    }
    if (config.direct) flags |= O_DIRECT;

    int fd;
    do {
        fd = ::open(path.c_str(), flags, 0644);
    } while (fd < 0 && errno == EINTR);
    if (fd < 0) {
        const int err = errno;
        throw Error(detail::open_error_code(err, config.direct), "open(" + path.string() + "): " + std::strerror(err));
    }

    FileHandle h;
    h.fd_ = fd;
    h.mode_ = mode;
    h.direct_ = config.direct;
    h.path_ = path;
    return h;
}

// ---------------------------------------------------------------------------

std::uint64_t IoRequest::length_bytes() const
{
    std::uint64_t total = 0;
    for (const auto& s : segments) total += s.size();
    return total;
}

IoEngine::IoEngine(EngineConfig config) : config_(config)
{
    config_.validate();
    slots_.resize(config_.queue_depth);
    free_slots_.reserve(config_.queue_depth);
    for (std::size_t i = config_.queue_depth; i-- > 0;) free_slots_.push_back(i);
}

IoEngine::~IoEngine() = default;

void IoEngine::validate(const IoRequest& r) const
{
    require(r.file != nullptr && r.file->is_open(), ErrorCode::InvalidHandle, "request targets no open file");
    if (r.op == IoOp::Write)
        require(r.file->writable(), ErrorCode::InvalidHandle, "write on read-only handle " + r.file->path().string());
    else
        require(r.file->mode() == OpenMode::ReadOnly, ErrorCode::InvalidHandle,
                "read on write-only handle " + r.file->path().string());
    require(!r.segments.empty() && r.segments.size() <= IOV_MAX, ErrorCode::InvalidArgument,
            "request needs 1.." + std::to_string(IOV_MAX) + " segments");
    for (const auto& s : r.segments)
        require(!s.empty(), ErrorCode::InvalidArgument, "empty request segment");

    if (config_.direct || r.file->direct()) {
        const std::uint64_t a = config_.alignment_bytes;
        require(r.offset_bytes % a == 0, ErrorCode::AlignmentViolation,
                "offset " + std::to_string(r.offset_bytes) + " not aligned to " + std::to_string(a));
        for (const auto& s : r.segments) {
            require(reinterpret_cast<std::uintptr_t>(s.data()) % a == 0, ErrorCode::AlignmentViolation,
                    "buffer address not aligned to " + std::to_string(a));
            require(s.size() % a == 0, ErrorCode::AlignmentViolation,
                    "length " + std::to_string(s.size()) + " not a multiple of " + std::to_string(a));
        }
    }
}

std::size_t IoEngine::submit_batch(std::span<const IoRequest> requests)
{
    for (const auto& r : requests) validate(r);
    for (const auto& r : requests) {
        backlog_.push_back(r);
        if (r.op == IoOp::Write)
            ++counters_.write_requests;
        else
            ++counters_.read_requests;
    }
    pump();
    return requests.size();
}

void IoEngine::pump()
{
    bool issued = false;
    while (!backlog_.empty() && in_flight_ < config_.queue_depth) {
        const std::size_t slot = free_slots_.back();
        free_slots_.pop_back();
        Op o;
        o.request = std::move(backlog_.front());
        backlog_.pop_front();
        o.length = o.request.length_bytes();
        o.submit_time = Clock::now();
        slots_[slot] = std::move(o);
        ++in_flight_;
        counters_.max_in_flight = std::max<std::uint32_t>(counters_.max_in_flight, static_cast<std::uint32_t>(in_flight_));
        issue(slot);
        issued = true;
    }
    if (in_flight_ > config_.queue_depth) throw std::logic_error("in-flight requests exceed queue depth");
    if (issued) flush();
}

void IoEngine::remaining_iov(const Op& o, std::vector<iovec>& iov)
{
    iov.clear();
    std::uint64_t skip = o.done;
    std::uint64_t budget = std::min(o.length - o.done, kMaxTransfer);
    for (const auto& s : o.request.segments) {
        if (budget == 0) break;
        if (skip >= s.size()) {
            skip -= s.size();
            continue;
        }
        const std::uint64_t len = std::min<std::uint64_t>(s.size() - skip, budget);
        iov.push_back(iovec{s.data() + skip, static_cast<std::size_t>(len)});
        budget -= len;
        skip = 0;
    }
}

void IoEngine::collect(bool wait, std::vector<CompletionRecord>& out)
{
    std::vector<std::pair<std::size_t, long long>> finished;
    reap(wait, finished);
    bool reissued = false;
    for (const auto& [slot, res] : finished) {
        Op& o = *slots_[slot];
        std::optional<std::error_code> error;
        if (res < 0) {
            error = std::error_code(static_cast<int>(-res), std::system_category());
        } else if (res == 0 && o.done < o.length) {
            // End of file on read, or a device that stopped accepting data.
            error = std::make_error_code(o.request.op == IoOp::Read ? std::errc::no_message_available : std::errc::io_error);
        } else {
            o.done += static_cast<std::uint64_t>(res);
            if (o.done < o.length) {
                ++o.resubmissions;
                ++counters_.resubmissions;
                const std::uint64_t unit = (config_.direct || o.request.file->direct()) ? config_.alignment_bytes : 1;
                if (o.resubmissions > o.length / unit + o.length / kMaxTransfer + 1)
                    throw std::logic_error("short-transfer resubmission bound exceeded");
                issue(slot);
                reissued = true;
                continue;
            }
        }

        CompletionRecord rec;
        rec.tag = o.request.tag;
        rec.op = o.request.op;
        rec.bytes_transferred = o.done;
        rec.error = error;
        rec.resubmissions = o.resubmissions;
        rec.submit_time = o.submit_time;
        rec.complete_time = Clock::now();
        ++counters_.completions;
        if (error)
            ++counters_.failed;
        else if (rec.op == IoOp::Write)
            counters_.bytes_written += rec.bytes_transferred;
        else
            counters_.bytes_read += rec.bytes_transferred;
        out.push_back(std::move(rec));

        slots_[slot].reset();
        free_slots_.push_back(slot);
        --in_flight_;
    }
    if (reissued) flush();
}

std::vector<CompletionRecord> IoEngine::await_completions(std::size_t min_count)
{
    require(min_count <= outstanding(), ErrorCode::InvalidArgument,
            "await of " + std::to_string(min_count) + " with only " + std::to_string(outstanding()) + " outstanding");
    std::vector<CompletionRecord> out;
    if (in_flight_ > 0) collect(false, out);
    pump();
    while (out.size() < min_count) {
        collect(true, out);
        pump();
    }
    return out;
}

std::vector<CompletionRecord> IoEngine::drain()
{
    return await_completions(outstanding());
}

std::unique_ptr<IoEngine> make_ring_engine(const EngineConfig& config);
std::unique_ptr<IoEngine> make_blocking_engine(const EngineConfig& config);

std::unique_ptr<IoEngine> make_engine(const EngineConfig& config)
{
    config.validate();
    return config.backend == Backend::Ring ? make_ring_engine(config) : make_blocking_engine(config);
}

} // namespace ckptbench
