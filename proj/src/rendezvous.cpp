// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/bench.hpp"

#include "fs_util.hpp"

#include <algorithm>
#include <thread>

namespace ckptbench {

namespace fs = std::filesystem;

namespace {

class Backoff {
public:
    void pause()
    {
        std::this_thread::sleep_for(delay_);
        delay_ = std::min(delay_ * 2, std::chrono::microseconds(2000));
    }

private:
    std::chrono::microseconds delay_{50};
};

} // namespace

Rendezvous::Rendezvous(fs::path dir, std::uint32_t rank, std::uint32_t world, std::chrono::duration<double> timeout)
    : dir_(std::move(dir)), rank_(rank), world_(world), timeout_(timeout)
{
    require(world >= 1 && rank < world, ErrorCode::InvalidArgument,
            "rank " + std::to_string(rank) + " outside world of " + std::to_string(world));
    std::error_code ec;
    fs::create_directories(dir_ / "barrier", ec);
    fs::create_directories(dir_ / "kv", ec);
    if (ec) throw Error(ErrorCode::PathError, "cannot create coordination dir " + dir_.string() + ": " + ec.message());
}

void Rendezvous::wait_for(const fs::path& path, std::string_view what)
{
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(timeout_);
    Backoff backoff;
    while (!fs::exists(path)) {
        if (aborted()) throw Error(ErrorCode::RankFailure, "run aborted while waiting for " + std::string(what));
        if (Clock::now() >= deadline)
            throw Error(ErrorCode::RendezvousTimeout, "rank " + std::to_string(rank_) + " timed out after " +
                                                          std::to_string(timeout_.count()) + " s waiting for " +
                                                          std::string(what));
        backoff.pause();
    }
}

double Rendezvous::arrive_and_wait(std::string_view name)
{
    const auto t0 = Clock::now();
    const std::string base(name);
    fsutil::write_file_atomic(dir_ / "barrier" / (base + "." + std::to_string(rank_)), "", false);
    for (std::uint32_t r = 0; r < world_; ++r)
        wait_for(dir_ / "barrier" / (base + "." + std::to_string(r)),
                 "barrier '" + base + "' (rank " + std::to_string(r) + ")");
    return seconds_between(t0, Clock::now());
}

void Rendezvous::publish(std::string_view key, std::string_view value)
{
    fsutil::write_file_atomic(dir_ / "kv" / std::string(key), value, false);
}

std::string Rendezvous::receive(std::string_view key)
{
    const auto path = dir_ / "kv" / std::string(key);
    wait_for(path, "value '" + std::string(key) + "'");
    return fsutil::read_file(path);
}

void Rendezvous::abort(std::string_view reason)
{
    fsutil::write_file_atomic(dir_ / "ABORT", reason, false);
}

bool Rendezvous::aborted() const { return fs::exists(dir_ / "ABORT"); }

fs::path coordination_dir(const fs::path& root, std::string_view run_id)
{
    return root / ".ckptbench" / std::string(run_id);
}

Rendezvous rank_rendezvous(std::uint32_t rank, std::uint32_t world, std::string_view run_id, const fs::path& root,
                           std::chrono::duration<double> timeout)
{
    return Rendezvous(coordination_dir(root, run_id), rank, world, timeout);
}

} // namespace ckptbench
