// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/error.hpp"

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <sys/uio.h>

namespace ckptbench {

using Clock = std::chrono::steady_clock;

enum class Backend { Ring, Blocking };

std::string_view to_string(Backend b);
Backend backend_from_string(std::string_view s);

struct EngineConfig {
    Backend backend = Backend::Ring;
    std::uint32_t queue_depth = 128;
    bool direct = false;
    std::uint64_t alignment_bytes = 4096;
    bool sync_on_close = true;
    // Held constant (off) and reported; see README.
    bool registered_buffers = false;
    bool fixed_files = false;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Aligned memory

class AlignedBuffer {
public:
    AlignedBuffer() = default;
    /// Zero-filled region of `size` bytes whose base is a multiple of `alignment`.
    AlignedBuffer(std::size_t size, std::size_t alignment);

    std::byte* data() noexcept { return data_.get(); }
    const std::byte* data() const noexcept { return data_.get(); }
    std::size_t size() const noexcept { return size_; }
    std::span<std::byte> span() noexcept { return {data_.get(), size_}; }
    std::span<const std::byte> span() const noexcept { return {data_.get(), size_}; }
    explicit operator bool() const noexcept { return static_cast<bool>(data_); }

private:
    struct Free {
        void operator()(std::byte* p) const noexcept;
    };
    std::unique_ptr<std::byte, Free> data_;
    std::size_t size_ = 0;
};

struct AllocationCounters {
    std::uint64_t allocations = 0;
    std::uint64_t reuses = 0;
};

class BufferPool;

/// A region on loan from a BufferPool; returned on destruction.
class PooledRegion {
public:
    PooledRegion() = default;
    PooledRegion(PooledRegion&& o) noexcept;
    PooledRegion& operator=(PooledRegion&& o) noexcept;
    PooledRegion(const PooledRegion&) = delete;
    PooledRegion& operator=(const PooledRegion&) = delete;
    ~PooledRegion();

    std::span<std::byte> span() const noexcept { return region_; }
    std::byte* data() const noexcept { return region_.data(); }
    std::size_t size() const noexcept { return region_.size(); }
    std::size_t index() const noexcept { return index_; }
    explicit operator bool() const noexcept { return pool_ != nullptr; }

    void release();

private:
    friend class BufferPool;
    PooledRegion(BufferPool* pool, std::size_t index, std::span<std::byte> region)
        : pool_(pool), index_(index), region_(region) {}

    BufferPool* pool_ = nullptr;
    std::size_t index_ = 0;
    std::span<std::byte> region_;
};

/// Bounded pool of equally sized aligned regions. Regions are created on
/// first demand and recycled LIFO; acquire() blocks while all are on loan.
class BufferPool {
public:
    static constexpr std::size_t kDefaultRegionSize = 64ull << 20;
    static constexpr std::size_t kDefaultRegionCount = 4;

    BufferPool(std::size_t region_size = kDefaultRegionSize,
               std::size_t region_count = kDefaultRegionCount,
               std::size_t alignment = 4096);

    PooledRegion acquire();
    std::optional<PooledRegion> try_acquire();
    void release(PooledRegion& region);

    /// Creates every region up front so later acquires never allocate.
    void warm_up();

    std::size_t region_size() const noexcept { return region_size_; }
    std::size_t region_count() const noexcept { return region_count_; }
    std::size_t alignment() const noexcept { return alignment_; }
    std::size_t in_use() const;
    AllocationCounters counters() const;

private:
    friend class PooledRegion;
    PooledRegion take_locked();
    void give_back(std::size_t index);

    std::size_t region_size_;
    std::size_t region_count_;
    std::size_t alignment_;
    mutable std::mutex mutex_;
    std::condition_variable available_;
    std::vector<AlignedBuffer> regions_;
    std::vector<std::size_t> free_;  // LIFO
    std::size_t in_use_ = 0;
    AllocationCounters counters_;
};

// ---------------------------------------------------------------------------
// Files

enum class OpenMode {
    ReadOnly,
    WriteCreate,  // create + truncate
    WriteShared,  // create without truncating; several writers own disjoint ranges
};

class FileHandle {
public:
    FileHandle() = default;
    FileHandle(FileHandle&& o) noexcept;
    FileHandle& operator=(FileHandle&& o) noexcept;
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
    ~FileHandle();

    int fd() const noexcept { return fd_; }
    bool is_open() const noexcept { return fd_ >= 0; }
    OpenMode mode() const noexcept { return mode_; }
    bool direct() const noexcept { return direct_; }
    bool writable() const noexcept { return mode_ != OpenMode::ReadOnly; }
    const std::filesystem::path& path() const noexcept { return path_; }

    /// Flushes file data to stable storage.
    void sync();
    void close();

private:
    friend FileHandle open_file(const std::filesystem::path&, OpenMode, const EngineConfig&);
    int fd_ = -1;
    OpenMode mode_ = OpenMode::ReadOnly;
    bool direct_ = false;
    std::filesystem::path path_;
};

/// Opens with cache bypass iff config.direct. A filesystem that refuses
/// cache bypass yields ErrorCode::DirectUnsupported; there is no fallback.
FileHandle open_file(const std::filesystem::path& path, OpenMode mode, const EngineConfig& config);

namespace detail {
/// Maps an open(2) errno to the engine's error code.
ErrorCode open_error_code(int err, bool direct);
} // namespace detail

// ---------------------------------------------------------------------------
// Requests and completions

enum class IoOp { Write, Read };

struct IoRequest {
    const FileHandle* file = nullptr;
    IoOp op = IoOp::Write;
    std::uint64_t offset_bytes = 0;
    /// Scatter/gather list; transferred back to back starting at offset_bytes.
    std::vector<std::span<std::byte>> segments;
    std::uint64_t tag = 0;

    static IoRequest write(const FileHandle& f, std::uint64_t offset, std::span<std::byte> buf, std::uint64_t tag)
    {
        return IoRequest{&f, IoOp::Write, offset, {buf}, tag};
    }
    static IoRequest read(const FileHandle& f, std::uint64_t offset, std::span<std::byte> buf, std::uint64_t tag)
    {
        return IoRequest{&f, IoOp::Read, offset, {buf}, tag};
    }

    std::uint64_t length_bytes() const;
};

struct CompletionRecord {
    std::uint64_t tag = 0;
    IoOp op = IoOp::Write;
    std::uint64_t bytes_transferred = 0;
    std::optional<std::error_code> error;
    std::uint32_t resubmissions = 0;
    Clock::time_point submit_time;
    Clock::time_point complete_time;

    bool ok() const noexcept { return !error.has_value(); }
};

struct EngineCounters {
    std::uint64_t write_requests = 0;
    std::uint64_t read_requests = 0;
    std::uint64_t bytes_written = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t completions = 0;
    std::uint64_t failed = 0;
    std::uint64_t resubmissions = 0;
    std::uint64_t kernel_submits = 0;  // submission syscalls (Ring) or I/O syscalls (Blocking)
    std::uint32_t max_in_flight = 0;
};

/// Batched asynchronous I/O engine. Confined to a single thread.
///
/// submit_batch validates the whole batch before anything is issued, then
/// puts as many requests in flight as the queue depth allows and keeps the
/// rest in a backlog that drains as completions are harvested. Short
/// transfers are resubmitted internally, so a successful completion always
/// carries the full requested length.
class IoEngine {
public:
    explicit IoEngine(EngineConfig config);
    virtual ~IoEngine();
    IoEngine(const IoEngine&) = delete;
    IoEngine& operator=(const IoEngine&) = delete;

    /// Returns the number of requests accepted (the whole batch).
    std::size_t submit_batch(std::span<const IoRequest> requests);
    std::size_t submit(const IoRequest& request) { return submit_batch({&request, 1}); }

    /// Blocks until at least `min_count` completions have been harvested, then
    /// returns everything available. Per-request failures are reported in the
    /// records, never thrown.
    std::vector<CompletionRecord> await_completions(std::size_t min_count);

    /// Harvests every outstanding request.
    std::vector<CompletionRecord> drain();

    std::size_t in_flight() const noexcept { return in_flight_; }
    std::size_t queued() const noexcept { return backlog_.size(); }
    std::size_t outstanding() const noexcept { return in_flight_ + backlog_.size(); }

    const EngineConfig& config() const noexcept { return config_; }
    const EngineCounters& counters() const noexcept { return counters_; }
    void reset_counters() { counters_ = {}; }

protected:
    struct Op {
        IoRequest request;
        std::uint64_t length = 0;
        std::uint64_t done = 0;
        std::uint32_t resubmissions = 0;
        Clock::time_point submit_time;
    };

    /// Largest transfer handed to the kernel in one go; longer requests
    /// continue through the short-transfer path.
    static constexpr std::uint64_t kMaxTransfer = 1ull << 30;

    /// Queue (or re-queue) the remaining range of the op in `slot`.
    virtual void issue(std::size_t slot) = 0;
    /// Hand everything queued by issue() to the kernel.
    virtual void flush() {}
    /// Append (slot, result) pairs for finished attempts; result is a byte
    /// count or -errno. Waits for at least one when `wait` is set.
    virtual void reap(bool wait, std::vector<std::pair<std::size_t, long long>>& finished) = 0;

    Op& op(std::size_t slot) { return *slots_[slot]; }
    std::size_t slot_count() const noexcept { return slots_.size(); }
    /// iovecs covering the not-yet-transferred part of `o`, capped at kMaxTransfer.
    static void remaining_iov(const Op& o, std::vector<struct iovec>& iov);
    void note_kernel_submit() noexcept { ++counters_.kernel_submits; }

    const EngineConfig config_;

private:
    void validate(const IoRequest& request) const;
    void pump();
    void collect(bool wait, std::vector<CompletionRecord>& out);

    std::vector<std::optional<Op>> slots_;
    std::vector<std::size_t> free_slots_;
    std::deque<IoRequest> backlog_;
    std::size_t in_flight_ = 0;
    EngineCounters counters_;
};

std::unique_ptr<IoEngine> make_engine(const EngineConfig& config);

/// True when the running kernel accepts io_uring_setup.
bool ring_supported();

} // namespace ckptbench
