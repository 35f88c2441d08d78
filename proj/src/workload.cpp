// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/workload.hpp"

#include "ckptbench/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace ckptbench {

namespace {

constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t to_little_endian(std::uint64_t v)
{
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
    return v;
}

} // namespace

std::string_view to_string(ObjectKind kind)
{
    switch (kind) {
    case ObjectKind::Tensor: return "tensor";
    case ObjectKind::LeanObject: return "lean";
    case ObjectKind::MetadataHeader: return "metadata";
    }
    return "tensor";
}

ObjectKind object_kind_from_string(std::string_view s)
{
    if (s == "tensor") return ObjectKind::Tensor;
    if (s == "lean" || s == "lean_object") return ObjectKind::LeanObject;
    if (s == "metadata" || s == "metadata_header" || s == "header") return ObjectKind::MetadataHeader;
    throw Error(ErrorCode::InvalidArgument, "unknown object kind '" + std::string(s) + "'");
}

std::uint64_t WorkloadSpec::total_bytes() const
{
    std::uint64_t total = 0;
    for (const auto& o : objects) total += o.size_bytes;
    return total;
}

std::uint64_t WorkloadSpec::total_bytes(std::uint32_t rank) const
{
    std::uint64_t total = 0;
    for (const auto& o : objects)
        if (o.rank == rank) total += o.size_bytes;
    return total;
}

std::uint64_t WorkloadSpec::tensor_bytes(std::uint32_t rank) const
{
    std::uint64_t total = 0;
    for (const auto& o : objects)
        if (o.rank == rank && o.kind == ObjectKind::Tensor) total += o.size_bytes;
    return total;
}

std::size_t WorkloadSpec::count(ObjectKind kind) const
{
    return static_cast<std::size_t>(
        std::count_if(objects.begin(), objects.end(), [kind](const ObjectSpec& o) { return o.kind == kind; }));
}

std::vector<const ObjectSpec*> WorkloadSpec::objects_of_rank(std::uint32_t rank) const
{
    std::vector<const ObjectSpec*> out;
    for (const auto& o : objects)
        if (o.rank == rank) out.push_back(&o);
    return out;
}

std::uint64_t splitmix64_mix(std::uint64_t x)
{
    std::uint64_t z = x + kGoldenGamma;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master_seed, std::uint32_t rank, std::uint64_t index)
{
    std::uint64_t h = splitmix64_mix(master_seed ^ 0x6a09e667f3bcc908ULL);
    h = splitmix64_mix(h ^ static_cast<std::uint64_t>(rank));
    return splitmix64_mix(h ^ index);
}

WorkloadSpec generate_synthetic(std::uint64_t total_bytes_per_rank,
                                std::uint64_t chunk_bytes,
                                std::uint32_t num_ranks,
                                std::uint64_t master_seed,
                                const SyntheticOptions& options)
{
    require(total_bytes_per_rank > 0 && chunk_bytes > 0 && num_ranks > 0, ErrorCode::InvalidArgument,
            "synthetic workload sizes and rank count must be non-zero");
    require(chunk_bytes <= total_bytes_per_rank, ErrorCode::InvalidArgument,
            "chunk size exceeds per-rank total");
    require(options.lean_bytes > 0 && options.header_bytes > 0, ErrorCode::InvalidArgument,
            "lean object and metadata header sizes must be non-zero");

    WorkloadSpec ws;
    ws.name = "synthetic";
    ws.num_ranks = num_ranks;
    ws.shards_per_rank = 1;
    ws.master_seed = master_seed;
    ws.provenance = "synthetic";

    const std::uint64_t tensors = (total_bytes_per_rank + chunk_bytes - 1) / chunk_bytes;
    ws.objects.reserve(num_ranks * (tensors + 2));
    std::uint64_t next_id = 0;
    for (std::uint32_t r = 0; r < num_ranks; ++r) {
        std::uint64_t index = 0;
        auto push = [&](ObjectKind kind, std::uint64_t size) {
            ws.objects.push_back(ObjectSpec{next_id++, r, 0, kind, size, derive_seed(master_seed, r, index++)});
        };
        push(ObjectKind::MetadataHeader, options.header_bytes);
        push(ObjectKind::LeanObject, options.lean_bytes);
        std::uint64_t remaining = total_bytes_per_rank;
        for (std::uint64_t t = 0; t < tensors; ++t) {
            const std::uint64_t size = std::min(chunk_bytes, remaining);
            push(ObjectKind::Tensor, size);
            remaining -= size;
        }
    }
    return ws;
}

WorkloadSpec generate_from_profile(const ModelProfile& profile, std::uint64_t master_seed)
{
    require(profile.num_ranks > 0, ErrorCode::MalformedProfile, "profile has no ranks");
    require(profile.per_rank_objects.size() == profile.num_ranks, ErrorCode::MalformedProfile,
            "profile declares " + std::to_string(profile.num_ranks) + " ranks but lists " +
                std::to_string(profile.per_rank_objects.size()));

    WorkloadSpec ws;
    ws.name = profile.name;
    ws.num_ranks = profile.num_ranks;
    ws.master_seed = master_seed;
    ws.provenance = profile.provenance;
    std::uint64_t next_id = 0;
    std::uint32_t max_shard = 0;
    for (std::uint32_t r = 0; r < profile.num_ranks; ++r) {
        std::uint64_t index = 0;
        for (const auto& e : profile.per_rank_objects[r]) {
            require(e.size_bytes > 0, ErrorCode::MalformedProfile,
                    "zero-sized object in rank " + std::to_string(r));
            max_shard = std::max(max_shard, e.shard);
            ws.objects.push_back(
                ObjectSpec{next_id++, r, e.shard, e.kind, e.size_bytes, derive_seed(master_seed, r, index++)});
        }
    }
    require(!ws.objects.empty(), ErrorCode::MalformedProfile, "profile lists no objects");
    ws.shards_per_rank = max_shard + 1;
    return ws;
}

std::uint64_t fnv1a(std::span<const std::byte> data, std::uint64_t state)
{
    std::uint64_t h = state;
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    const std::size_t n = data.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        h = (h ^ p[i]) * kFnvPrime;
        h = (h ^ p[i + 1]) * kFnvPrime;
        h = (h ^ p[i + 2]) * kFnvPrime;
        h = (h ^ p[i + 3]) * kFnvPrime;
    }
    for (; i < n; ++i) h = (h ^ p[i]) * kFnvPrime;
    return h;
}

std::uint64_t fill_buffer(std::span<std::byte> buffer, std::uint64_t seed)
{
    require(!buffer.empty(), ErrorCode::InvalidArgument, "fill_buffer requires a non-empty buffer");
    std::byte* out = buffer.data();
    const std::size_t words = buffer.size() / 8;
    std::uint64_t state = seed;
    for (std::size_t w = 0; w < words; ++w) {
        const std::uint64_t v = to_little_endian(splitmix64_mix(state));
        state += kGoldenGamma;
        std::memcpy(out + w * 8, &v, 8);
    }
    const std::size_t tail = buffer.size() % 8;
    if (tail != 0) {
        const std::uint64_t v = to_little_endian(splitmix64_mix(state));
        std::memcpy(out + words * 8, &v, tail);
    }
    return fnv1a(buffer);
}

} // namespace ckptbench
