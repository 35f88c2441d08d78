// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ckptbench {

constexpr std::uint64_t KiB = 1024;
constexpr std::uint64_t MiB = 1024 * KiB;
constexpr std::uint64_t GiB = 1024 * MiB;

enum class ObjectKind { Tensor, LeanObject, MetadataHeader };

std::string_view to_string(ObjectKind kind);
ObjectKind object_kind_from_string(std::string_view s);

struct ObjectSpec {
    std::uint64_t object_id = 0;
    std::uint32_t rank = 0;
    std::uint32_t shard_index = 0;
    ObjectKind kind = ObjectKind::Tensor;
    std::uint64_t size_bytes = 1;
    std::uint64_t content_seed = 0;

    bool operator==(const ObjectSpec&) const = default;
};

struct WorkloadSpec {
    std::string name;
    std::uint32_t num_ranks = 1;
    std::uint32_t shards_per_rank = 1;
    std::vector<ObjectSpec> objects;
    std::uint64_t master_seed = 0;
    // "synthetic", "built-in (approximate)" or "loaded-from-file"
    std::string provenance;

    std::uint64_t total_bytes() const;
    std::uint64_t total_bytes(std::uint32_t rank) const;
    std::uint64_t tensor_bytes(std::uint32_t rank) const;
    std::size_t count(ObjectKind kind) const;
    std::vector<const ObjectSpec*> objects_of_rank(std::uint32_t rank) const;

    bool operator==(const WorkloadSpec&) const = default;
};

struct ProfileEntry {
    std::uint32_t shard = 0;
    ObjectKind kind = ObjectKind::Tensor;
    std::uint64_t size_bytes = 0;

    bool operator==(const ProfileEntry&) const = default;
};

struct ModelProfile {
    std::string name;
    std::uint32_t num_ranks = 0;
    std::vector<std::vector<ProfileEntry>> per_rank_objects;
    std::string provenance;  // "built-in" or "loaded-from-file"
};

struct SyntheticOptions {
    std::uint64_t lean_bytes = 64 * KiB;
    std::uint64_t header_bytes = 4 * KiB;
};

/// Deterministic seed for object `index` of `rank`.
///
///   h = splitmix64_mix(master_seed ^ 0x6a09e667f3bcc908)
///   h = splitmix64_mix(h ^ rank)
///   h = splitmix64_mix(h ^ index)
std::uint64_t derive_seed(std::uint64_t master_seed, std::uint32_t rank, std::uint64_t index);

/// splitmix64 finalizer applied to (x + golden gamma).
std::uint64_t splitmix64_mix(std::uint64_t x);

/// One shard per rank: a MetadataHeader, a LeanObject and ceil(total/chunk)
/// tensors of chunk_bytes (the last may be shorter).
WorkloadSpec generate_synthetic(std::uint64_t total_bytes_per_rank,
                                std::uint64_t chunk_bytes,
                                std::uint32_t num_ranks,
                                std::uint64_t master_seed,
                                const SyntheticOptions& options = {});

/// One ObjectSpec per profile entry, in profile order.
WorkloadSpec generate_from_profile(const ModelProfile& profile, std::uint64_t master_seed);

/// Built-in profiles: "3b" (4 ranks), "7b" (8 ranks), "13b" (16 ranks).
/// Per-file sizes are synthesized from the model architecture; see
/// docs/formats.md.
ModelProfile builtin_profile(std::string_view name);
std::vector<std::string> builtin_profile_names();

/// Parses the line format `rank shard kind size_bytes` ('#' starts a comment).
ModelProfile parse_profile(std::string_view text, std::string name = "custom");
ModelProfile load_profile(const std::filesystem::path& path);
std::string format_profile(const ModelProfile& profile);

/// Name ("3b", "7b", "13b") or a path to a profile file.
ModelProfile resolve_profile(std::string_view name_or_path);

/// Multiplies every size by `factor` (minimum 1 byte). Used to run the LLM
/// profiles at desk scale.
ModelProfile scale_profile(const ModelProfile& profile, double factor);

/// Fills `buffer` with the seeded splitmix64 stream (little-endian 8-byte
/// words, tail bytes taken from the low end of the next word) and returns
/// its FNV-1a 64-bit checksum. Precondition: buffer is non-empty.
std::uint64_t fill_buffer(std::span<std::byte> buffer, std::uint64_t seed);

constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// Streaming FNV-1a: pass the previous return value as `state` to continue.
std::uint64_t fnv1a(std::span<const std::byte> data, std::uint64_t state = kFnvOffsetBasis);

} // namespace ckptbench
