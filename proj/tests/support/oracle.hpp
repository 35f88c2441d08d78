// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

// Reference implementations used by the tests. Everything here is written
// straight from the algorithm definitions and shares no code with the
// library.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace oracle {

/// Textbook splitmix64 generator.
struct SplitMix64 {
    std::uint64_t state;

    std::uint64_t next()
    {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
};

/// Object bytes: little-endian words of the stream seeded with `seed`, the
/// last partial word truncated.
inline std::vector<unsigned char> object_bytes(std::uint64_t seed, std::uint64_t size)
{
    std::vector<unsigned char> out(size);
    SplitMix64 g{seed};
    for (std::uint64_t i = 0; i < size; i += 8) {
        const std::uint64_t w = g.next();
        for (std::uint64_t b = 0; b < 8 && i + b < size; ++b) out[i + b] = static_cast<unsigned char>(w >> (8 * b));
    }
    return out;
}

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::vector<unsigned char>& v) { return fnv1a(v.data(), v.size()); }

inline std::uint64_t object_checksum(std::uint64_t seed, std::uint64_t size) { return fnv1a(object_bytes(seed, size)); }

/// One splitmix64 output for state x (the library's per-object seed mixer).
inline std::uint64_t mix(std::uint64_t x) { return SplitMix64{x}.next(); }

inline std::uint64_t seed_of(std::uint64_t master, std::uint32_t rank, std::uint64_t index)
{
    return mix(mix(mix(master ^ 0x6a09e667f3bcc908ULL) ^ rank) ^ index);
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Scratch directory removed on destruction. Created below
/// $CKPTBENCH_TEST_DIR when set, otherwise below the system temp dir.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t")
    {
        const char* base = std::getenv("CKPTBENCH_TEST_DIR");
        const std::filesystem::path root = base && *base ? base : std::filesystem::temp_directory_path();
        std::filesystem::create_directories(root);
        std::string tmpl = (root / ("ckptbench-" + tag + "-XXXXXX")).string();
        if (::mkdtemp(tmpl.data()) == nullptr) std::abort();
        path_ = tmpl;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

} // namespace oracle
