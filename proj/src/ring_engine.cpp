// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

// io_uring backend driven through the raw system calls.

#include "ckptbench/engine.hpp"

#include <cerrno>
#include <cstring>

#include <linux/io_uring.h>
#include <sys/mman.h>
#include <sys/syscall.h>
#include <unistd.h>

namespace ckptbench {

namespace {

int sys_setup(unsigned entries, io_uring_params* p)
{
    return static_cast<int>(::syscall(__NR_io_uring_setup, entries, p));
}

int sys_enter(int fd, unsigned to_submit, unsigned min_complete, unsigned flags)
{
    return static_cast<int>(::syscall(__NR_io_uring_enter, fd, to_submit, min_complete, flags, nullptr, 0));
}

template <typename T>
T load_acquire(const T* p)
{
    return __atomic_load_n(p, __ATOMIC_ACQUIRE);
}

template <typename T>
void store_release(T* p, T v)
{
    __atomic_store_n(p, v, __ATOMIC_RELEASE);
}

class Mapping {
public:
    Mapping() = default;
    Mapping(int fd, std::size_t size, off_t offset) : size_(size)
    {
        void* p = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED | MAP_POPULATE, fd, offset);
        if (p == MAP_FAILED) throw Error(ErrorCode::IoError, std::string("io_uring mmap: ") + std::strerror(errno));
        base_ = static_cast<char*>(p);
    }
    Mapping(Mapping&& o) noexcept : base_(std::exchange(o.base_, nullptr)), size_(o.size_) {}
    Mapping& operator=(Mapping&& o) noexcept
    {
        if (this != &o) {
            reset();
            base_ = std::exchange(o.base_, nullptr);
            size_ = o.size_;
        }
        return *this;
    }
    ~Mapping() { reset(); }

    char* base() const { return base_; }

private:
    void reset()
    {
        if (base_) ::munmap(std::exchange(base_, nullptr), size_);
    }
    char* base_ = nullptr;
    std::size_t size_ = 0;
};

class RingEngine final : public IoEngine {
public:
    explicit RingEngine(const EngineConfig& config) : IoEngine(config)
    {
        io_uring_params p{};
        ring_fd_ = sys_setup(config_.queue_depth, &p);
        if (ring_fd_ < 0) throw Error(ErrorCode::IoError, std::string("io_uring_setup: ") + std::strerror(errno));

        try {
            std::size_t sq_size = p.sq_off.array + p.sq_entries * sizeof(unsigned);
            std::size_t cq_size = p.cq_off.cqes + p.cq_entries * sizeof(io_uring_cqe);
            if (p.features & IORING_FEAT_SINGLE_MMAP) sq_size = cq_size = std::max(sq_size, cq_size);

            sq_map_ = Mapping(ring_fd_, sq_size, IORING_OFF_SQ_RING);
            char* cq_base = sq_map_.base();
            if (!(p.features & IORING_FEAT_SINGLE_MMAP)) {
                cq_map_ = Mapping(ring_fd_, cq_size, IORING_OFF_CQ_RING);
                cq_base = cq_map_.base();
            }
            sqe_map_ = Mapping(ring_fd_, p.sq_entries * sizeof(io_uring_sqe), IORING_OFF_SQES);

            char* sq = sq_map_.base();
            sq_head_ = reinterpret_cast<unsigned*>(sq + p.sq_off.head);
            sq_tail_ = reinterpret_cast<unsigned*>(sq + p.sq_off.tail);
            sq_mask_ = *reinterpret_cast<unsigned*>(sq + p.sq_off.ring_mask);
            sq_array_ = reinterpret_cast<unsigned*>(sq + p.sq_off.array);
            sq_entries_ = p.sq_entries;
            sqes_ = reinterpret_cast<io_uring_sqe*>(sqe_map_.base());

            cq_head_ = reinterpret_cast<unsigned*>(cq_base + p.cq_off.head);
            cq_tail_ = reinterpret_cast<unsigned*>(cq_base + p.cq_off.tail);
            cq_mask_ = *reinterpret_cast<unsigned*>(cq_base + p.cq_off.ring_mask);
            cqes_ = reinterpret_cast<io_uring_cqe*>(cq_base + p.cq_off.cqes);
        } catch (...) {
            ::close(ring_fd_);
            throw;
        }
        iovs_.resize(slot_count());
    }

    ~RingEngine() override
    {
        // The kernel may still be writing into caller buffers and iovec
        // arrays; wait for every submitted op before tearing down.
        try {
            flush();
            while (kernel_pending_ > 0) {
                sys_enter(ring_fd_, 0, 1, IORING_ENTER_GETEVENTS);
                std::vector<std::pair<std::size_t, long long>> ignored;
                harvest(ignored);
            }
        } catch (...) {
        }
        sqe_map_ = {};
        cq_map_ = {};
        sq_map_ = {};
        ::close(ring_fd_);
    }

protected:
    void issue(std::size_t slot) override
    {
        auto& iov = iovs_[slot];
        remaining_iov(op(slot), iov);
        const Op& o = op(slot);

        unsigned tail = *sq_tail_;
        if (tail - load_acquire(sq_head_) >= sq_entries_) {
            flush();
            tail = *sq_tail_;
        }
        const unsigned index = tail & sq_mask_;
        io_uring_sqe* sqe = &sqes_[index];
        std::memset(sqe, 0, sizeof *sqe);
        sqe->opcode = o.request.op == IoOp::Write ? IORING_OP_WRITEV : IORING_OP_READV;
        sqe->fd = o.request.file->fd();
        sqe->off = o.request.offset_bytes + o.done;
        sqe->addr = reinterpret_cast<std::uint64_t>(iov.data());
        sqe->len = static_cast<std::uint32_t>(iov.size());
        sqe->user_data = slot;
        sq_array_[index] = index;
        store_release(sq_tail_, tail + 1);
        ++unsubmitted_;
    }

    void flush() override
    {
        while (unsubmitted_ > 0) {
            const int rc = sys_enter(ring_fd_, unsubmitted_, 0, 0);
            if (rc < 0) {
                if (errno == EINTR || errno == EAGAIN || errno == EBUSY) continue;
                throw Error(ErrorCode::IoError, std::string("io_uring_enter: ") + std::strerror(errno));
            }
            note_kernel_submit();
            unsubmitted_ -= static_cast<unsigned>(rc);
            kernel_pending_ += static_cast<unsigned>(rc);
        }
    }

    void reap(bool wait, std::vector<std::pair<std::size_t, long long>>& finished) override
    {
        flush();
        if (harvest(finished) > 0 || !wait || kernel_pending_ == 0) return;
        for (;;) {
            const int rc = sys_enter(ring_fd_, 0, 1, IORING_ENTER_GETEVENTS);
            if (rc < 0 && errno != EINTR)
                throw Error(ErrorCode::IoError, std::string("io_uring_enter(wait): ") + std::strerror(errno));
            if (harvest(finished) > 0) return;
        }
    }

private:
    std::size_t harvest(std::vector<std::pair<std::size_t, long long>>& finished)
    {
        unsigned head = *cq_head_;
        const unsigned tail = load_acquire(cq_tail_);
        std::size_t n = 0;
        for (; head != tail; ++head, ++n) {
            const io_uring_cqe& cqe = cqes_[head & cq_mask_];
            finished.emplace_back(static_cast<std::size_t>(cqe.user_data), static_cast<long long>(cqe.res));
        }
        store_release(cq_head_, head);
        kernel_pending_ -= static_cast<unsigned>(n);
        return n;
    }

    int ring_fd_ = -1;
    Mapping sq_map_, cq_map_, sqe_map_;
    unsigned* sq_head_ = nullptr;
    unsigned* sq_tail_ = nullptr;
    unsigned* sq_array_ = nullptr;
    unsigned sq_mask_ = 0;
    unsigned sq_entries_ = 0;
    io_uring_sqe* sqes_ = nullptr;
    unsigned* cq_head_ = nullptr;
    unsigned* cq_tail_ = nullptr;
    unsigned cq_mask_ = 0;
    io_uring_cqe* cqes_ = nullptr;
    unsigned unsubmitted_ = 0;
    unsigned kernel_pending_ = 0;
    std::vector<std::vector<iovec>> iovs_;
};

} // namespace

std::unique_ptr<IoEngine> make_ring_engine(const EngineConfig& config)
{
    return std::make_unique<RingEngine>(config);
}

bool ring_supported()
{
    io_uring_params p{};
    const int fd = sys_setup(1, &p);
    if (fd < 0) return false;
    ::close(fd);
    return true;
}

} // namespace ckptbench
