// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/engine.hpp"
#include "ckptbench/workload.hpp"

#include "oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <climits>
#include <cstring>
#include <set>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

using namespace ckptbench;

namespace {

std::vector<Backend> backends()
{
    std::vector<Backend> out{Backend::Blocking};
    if (ring_supported())
        out.push_back(Backend::Ring);
    else
        MESSAGE("io_uring unavailable; ring backend cases skipped");
    return out;
}

EngineConfig config_for(Backend b, std::uint32_t qd = 8, bool direct = false)
{
    EngineConfig c;
    c.backend = b;
    c.queue_depth = qd;
    c.direct = direct;
    return c;
}

ErrorCode error_of(auto&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::RankFailure;
}

void fill_pattern(std::span<std::byte> s, std::uint64_t seed)
{
    const auto bytes = oracle::object_bytes(seed, s.size());
    std::memcpy(s.data(), bytes.data(), s.size());
}

/// Runs real pread/pwrite but moves at most `cap` bytes per attempt, so
/// every request goes through the short-transfer path.
class CappedEngine : public IoEngine {
public:
    CappedEngine(EngineConfig c, std::size_t cap) : IoEngine(c), cap_(cap) {}
    std::size_t attempts = 0;

protected:
    void issue(std::size_t slot) override
    {
        ++attempts;
        std::vector<struct iovec> iov;
        remaining_iov(op(slot), iov);
        std::size_t left = cap_;
        std::vector<struct iovec> capped;
        for (auto v : iov) {
            if (left == 0) break;
            v.iov_len = std::min(v.iov_len, left);
            left -= v.iov_len;
            capped.push_back(v);
        }
        const Op& o = op(slot);
        const int fd = o.request.file->fd();
        const auto off = static_cast<off_t>(o.request.offset_bytes + o.done);
        const ssize_t n = o.request.op == IoOp::Write ? ::pwritev(fd, capped.data(), static_cast<int>(capped.size()), off)
                                                      : ::preadv(fd, capped.data(), static_cast<int>(capped.size()), off);
        done_.emplace_back(slot, n < 0 ? -errno : n);
    }
    void reap(bool, std::vector<std::pair<std::size_t, long long>>& finished) override
    {
        finished.insert(finished.end(), done_.begin(), done_.end());
        done_.clear();
    }

private:
    std::size_t cap_;
    std::vector<std::pair<std::size_t, long long>> done_;
};

} // namespace

TEST_CASE("backend names")
{
    CHECK(backend_from_string("ring") == Backend::Ring);
    CHECK(backend_from_string("io_uring") == Backend::Ring);
    CHECK(backend_from_string("blocking") == Backend::Blocking);
    CHECK(backend_from_string(to_string(Backend::Blocking)) == Backend::Blocking);
    CHECK_THROWS_AS(backend_from_string("aio"), Error);
}

TEST_CASE("engine config validation")
{
    EngineConfig c;
    c.queue_depth = 0;
    CHECK(error_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    c.queue_depth = 4;
    c.direct = true;
    c.alignment_bytes = 1000;
    CHECK(error_of([&] { c.validate(); }) != ErrorCode::RankFailure);
    c.alignment_bytes = 4096;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("aligned buffers are aligned and zeroed")
{
    for (std::size_t a : {512u, 4096u, 65536u}) {
        AlignedBuffer b(3 * a + 7, a);
        CHECK(reinterpret_cast<std::uintptr_t>(b.data()) % a == 0);
        CHECK(b.size() == 3 * a + 7);
        CHECK(std::all_of(b.data(), b.data() + b.size(), [](std::byte x) { return x == std::byte{0}; }));
    }
}

TEST_CASE("buffer pool creates lazily and reuses LIFO")
{
    BufferPool pool(8192, 3, 4096);
    CHECK(pool.counters().allocations == 0);
    auto a = pool.acquire();
    auto b = pool.acquire();
    CHECK(pool.counters().allocations == 2);
    CHECK(pool.in_use() == 2);
    CHECK(reinterpret_cast<std::uintptr_t>(a.data()) % 4096 == 0);
    CHECK(a.size() == 8192);
    const auto b_index = b.index();
    b.release();
    auto c = pool.acquire();
    CHECK(c.index() == b_index);
    CHECK(pool.counters().allocations == 2);
    CHECK(pool.counters().reuses == 1);
    auto d = pool.acquire();
    CHECK_FALSE(pool.try_acquire().has_value());
    CHECK(pool.counters().allocations == 3);

    std::thread t([&] { a.release(); });
    auto e = pool.acquire();  // blocks until the other thread returns a region
    t.join();
    CHECK(e);
    CHECK(pool.counters().allocations == 3);
}

TEST_CASE("buffer pool warm-up allocates every region once")
{
    BufferPool pool(4096, 4, 4096);
    pool.warm_up();
    CHECK(pool.counters().allocations == 4);
    for (int i = 0; i < 10; ++i) {
        auto r = pool.acquire();
    }
    CHECK(pool.counters().allocations == 4);
    CHECK(pool.counters().reuses == 10);
}

TEST_CASE("open errno mapping")
{
    CHECK(detail::open_error_code(EINVAL, true) == ErrorCode::DirectUnsupported);
    CHECK(detail::open_error_code(ENOENT, false) == ErrorCode::PathError);
    CHECK(detail::open_error_code(EACCES, false) == ErrorCode::PermissionDenied);
    CHECK(detail::open_error_code(EIO, false) != ErrorCode::DirectUnsupported);
}

TEST_CASE("open_file reports missing paths")
{
    oracle::TempDir tmp("open");
    CHECK(error_of([&] { open_file(tmp / "no/such/file", OpenMode::ReadOnly, EngineConfig{}); }) == ErrorCode::PathError);
}

TEST_CASE("write and read back through every backend")
{
    for (Backend be : backends()) {
        CAPTURE(to_string(be));
        for (bool direct : {false, true}) {
            oracle::TempDir tmp("rw");
            const auto cfg = config_for(be, 4, direct);
            AlignedBuffer src(64 * KiB, 4096), dst(64 * KiB, 4096);
            fill_pattern(src.span(), 11);
            FileHandle w;
            try {
                w = open_file(tmp / "f.bin", OpenMode::WriteCreate, cfg);
            } catch (const Error& e) {
                REQUIRE(e.code() == ErrorCode::DirectUnsupported);
                MESSAGE("direct-unsupported on " << tmp.path());
                continue;
            }
            auto engine = make_engine(cfg);
            std::vector<IoRequest> reqs;
            // Two gathered segments, then a plain single-segment request.
            reqs.push_back(IoRequest{&w, IoOp::Write, 0, {src.span().subspan(0, 8192), src.span().subspan(8192, 8192)}, 1});
            reqs.push_back(IoRequest::write(w, 16384, src.span().subspan(16384), 2));
            CHECK(engine->submit_batch(reqs) == 2);
            auto done = engine->drain();
            REQUIRE(done.size() == 2);
            for (const auto& r : done) CHECK(r.ok());
            CHECK(engine->counters().bytes_written == 64 * KiB);
            CHECK(engine->counters().write_requests == 2);
            w.sync();
            w.close();

            auto r = open_file(tmp / "f.bin", OpenMode::ReadOnly, cfg);
            engine->submit(IoRequest::read(r, 0, dst.span(), 3));
            done = engine->drain();
            REQUIRE(done.size() == 1);
            CHECK(done[0].ok());
            CHECK(done[0].bytes_transferred == 64 * KiB);
            CHECK(std::memcmp(src.data(), dst.data(), dst.size()) == 0);
            CHECK(oracle::read_all(tmp / "f.bin") == oracle::object_bytes(11, 64 * KiB));
        }
    }
}

TEST_CASE("queue depth bounds requests in flight; the rest wait in the backlog")
{
    for (Backend be : backends()) {
        CAPTURE(to_string(be));
        oracle::TempDir tmp("qd");
        const auto cfg = config_for(be, 4);
        auto engine = make_engine(cfg);
        auto f = open_file(tmp / "f.bin", OpenMode::WriteCreate, cfg);
        AlignedBuffer buf(10 * 4096, 4096);
        std::vector<IoRequest> reqs;
        for (std::uint64_t i = 0; i < 10; ++i) reqs.push_back(IoRequest::write(f, i * 4096, buf.span().subspan(i * 4096, 4096), i));
        CHECK(engine->submit_batch(reqs) == 10);
        CHECK(engine->in_flight() == 4);
        CHECK(engine->queued() == 6);
        CHECK(engine->outstanding() == 10);
        auto first = engine->await_completions(1);
        CHECK(first.size() >= 1);
        CHECK(engine->in_flight() <= 4);
        auto rest = engine->drain();
        std::set<std::uint64_t> tags;
        for (auto& r : first) tags.insert(r.tag);
        for (auto& r : rest) tags.insert(r.tag);
        CHECK(tags.size() == 10);
        CHECK(engine->outstanding() == 0);
        CHECK(engine->counters().max_in_flight == 4);
        CHECK(engine->counters().completions == 10);
    }
}

TEST_CASE("direct mode rejects misaligned requests before issuing any")
{
    oracle::TempDir tmp("align");
    for (Backend be : backends()) {
        CAPTURE(to_string(be));
        const auto cfg = config_for(be, 4, true);
        FileHandle f;
        try {
            f = open_file(tmp / "f.bin", OpenMode::WriteCreate, cfg);
        } catch (const Error& e) {
            REQUIRE(e.code() == ErrorCode::DirectUnsupported);
            continue;
        }
        auto engine = make_engine(cfg);
        AlignedBuffer buf(3 * 4096, 4096);
        const IoRequest good = IoRequest::write(f, 0, buf.span().subspan(0, 4096), 0);
        const IoRequest bad_offset = IoRequest::write(f, 512, buf.span().subspan(0, 4096), 1);
        const IoRequest bad_address = IoRequest::write(f, 0, buf.span().subspan(1, 4096), 2);
        const IoRequest bad_length = IoRequest::write(f, 0, buf.span().subspan(0, 4000), 3);
        for (const auto& bad : {bad_offset, bad_address, bad_length}) {
            const IoRequest batch[] = {good, bad};
            CHECK(error_of([&] { engine->submit_batch(batch); }) == ErrorCode::AlignmentViolation);
            CHECK(engine->outstanding() == 0);
        }
        CHECK(engine->counters().write_requests == 0);
    }
}

TEST_CASE("invalid handles and segment lists are rejected")
{
    oracle::TempDir tmp("handle");
    const auto cfg = config_for(Backend::Blocking);
    auto engine = make_engine(cfg);
    AlignedBuffer buf(4096, 4096);
    FileHandle closed;
    CHECK(error_of([&] { engine->submit(IoRequest::write(closed, 0, buf.span(), 0)); }) == ErrorCode::InvalidHandle);
    IoRequest none;
    none.segments = {buf.span()};
    CHECK(error_of([&] { engine->submit(none); }) == ErrorCode::InvalidHandle);

    auto w = open_file(tmp / "f.bin", OpenMode::WriteCreate, cfg);
    auto r = open_file(tmp / "f.bin", OpenMode::ReadOnly, cfg);
    CHECK(error_of([&] { engine->submit(IoRequest::write(r, 0, buf.span(), 0)); }) == ErrorCode::InvalidHandle);
    CHECK(error_of([&] { engine->submit(IoRequest::read(w, 0, buf.span(), 0)); }) == ErrorCode::InvalidHandle);

    IoRequest many{&w, IoOp::Write, 0, {}, 0};
    many.segments.assign(IOV_MAX + 1, buf.span().subspan(0, 1));
    CHECK(error_of([&] { engine->submit(many); }) == ErrorCode::InvalidArgument);
    IoRequest empty_segment{&w, IoOp::Write, 0, {std::span<std::byte>{}}, 0};
    CHECK(error_of([&] { engine->submit(empty_segment); }) == ErrorCode::InvalidArgument);
    CHECK(engine->outstanding() == 0);
}

TEST_CASE("a descriptor closed behind the handle fails the request with EBADF")
{
    for (Backend be : backends()) {
        CAPTURE(to_string(be));
        oracle::TempDir tmp("ebadf");
        const auto cfg = config_for(be);
        auto engine = make_engine(cfg);
        auto f = open_file(tmp / "f.bin", OpenMode::WriteCreate, cfg);
        ::close(f.fd());
        AlignedBuffer buf(4096, 4096);
        engine->submit(IoRequest::write(f, 0, buf.span(), 9));
        auto done = engine->drain();
        REQUIRE(done.size() == 1);
        REQUIRE(done[0].error.has_value());
        CHECK(done[0].error->value() == EBADF);
        CHECK(engine->counters().failed == 1);
    }
}

TEST_CASE("reads past end of file complete with a partial count and an error")
{
    for (Backend be : backends()) {
        CAPTURE(to_string(be));
        oracle::TempDir tmp("eof");
        {
            std::ofstream(tmp / "f.bin", std::ios::binary) << std::string(1000, 'x');
        }
        const auto cfg = config_for(be);
        auto engine = make_engine(cfg);
        auto f = open_file(tmp / "f.bin", OpenMode::ReadOnly, cfg);
        AlignedBuffer buf(4096, 4096);
        engine->submit(IoRequest::read(f, 0, buf.span(), 1));
        auto done = engine->drain();
        REQUIRE(done.size() == 1);
        CHECK_FALSE(done[0].ok());
        CHECK(done[0].bytes_transferred == 1000);
        CHECK(done[0].resubmissions == 1);
    }
}

TEST_CASE("short transfers are resubmitted until the request is complete")
{
    oracle::TempDir tmp("short");
    EngineConfig cfg = config_for(Backend::Blocking, 2);
    CappedEngine engine(cfg, 1000);
    auto w = open_file(tmp / "f.bin", OpenMode::WriteCreate, cfg);
    AlignedBuffer src(10 * 1000 + 123, 4096), dst(src.size(), 4096);
    fill_pattern(src.span(), 5);
    const IoRequest req{&w, IoOp::Write, 0, {src.span().subspan(0, 4567), src.span().subspan(4567)}, 1};
    engine.submit(req);
    auto done = engine.drain();
    REQUIRE(done.size() == 1);
    CHECK(done[0].ok());
    CHECK(done[0].bytes_transferred == src.size());
    CHECK(done[0].resubmissions == 10);
    CHECK(engine.attempts == 11);
    CHECK(engine.counters().resubmissions == 10);
    w.close();

    auto r = open_file(tmp / "f.bin", OpenMode::ReadOnly, cfg);
    engine.submit(IoRequest::read(r, 0, dst.span(), 2));
    done = engine.drain();
    REQUIRE(done.size() == 1);
    CHECK(done[0].ok());
    CHECK(std::memcmp(src.data(), dst.data(), src.size()) == 0);
}
