// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

// Synchronous backend: each request is carried out with pwritev/preadv at
// issue time and its result parked until the next reap.

#include "ckptbench/engine.hpp"

#include <cerrno>

#include <sys/uio.h>

namespace ckptbench {

namespace {

class BlockingEngine final : public IoEngine {
public:
    explicit BlockingEngine(const EngineConfig& config) : IoEngine(config) {}

protected:
    void issue(std::size_t slot) override
    {
        const Op& o = op(slot);
        remaining_iov(o, iov_);
        const int fd = o.request.file->fd();
        const off_t off = static_cast<off_t>(o.request.offset_bytes + o.done);
        const int cnt = static_cast<int>(iov_.size());
        ssize_t rc;
        do {
            rc = o.request.op == IoOp::Write ? ::pwritev(fd, iov_.data(), cnt, off) : ::preadv(fd, iov_.data(), cnt, off);
        } while (rc < 0 && errno == EINTR);
        note_kernel_submit();
        done_.emplace_back(slot, rc < 0 ? -static_cast<long long>(errno) : static_cast<long long>(rc));
    }

    void reap(bool, std::vector<std::pair<std::size_t, long long>>& finished) override
    {
        finished.insert(finished.end(), done_.begin(), done_.end());
        done_.clear();
    }

private:
    std::vector<iovec> iov_;
    std::vector<std::pair<std::size_t, long long>> done_;
};

} // namespace

std::unique_ptr<IoEngine> make_blocking_engine(const EngineConfig& config)
{
    return std::make_unique<BlockingEngine>(config);
}

} // namespace ckptbench
