// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

// Built-in LLM checkpoint profiles and the line-oriented profile file format.
//
// Per-file sizes are synthesized from the model architectures under tensor
// parallelism with bf16 model states
// (2 bytes/param) and fp32 optimizer state (master copy + two Adam moments,
// 12 bytes/param). Every shard carries one metadata header and one lean
// object. The 3b profile absorbs the rounding slack into its optimizer shard
// so that its total is exactly 42e9 bytes across 132 files.

#include "ckptbench/error.hpp"
#include "ckptbench/workload.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace ckptbench {

namespace {

constexpr std::uint64_t kHeaderBytes = 4 * KiB;
constexpr std::uint64_t kLeanBytes = 64 * KiB;
constexpr std::uint64_t kBf16 = 2;

struct ShardBuilder {
    std::vector<ProfileEntry>& out;
    std::uint32_t shard = 0;

    void begin()
    {
        out.push_back({shard, ObjectKind::MetadataHeader, kHeaderBytes});
        out.push_back({shard, ObjectKind::LeanObject, kLeanBytes});
    }
    void tensor(std::uint64_t bytes) { out.push_back({shard, ObjectKind::Tensor, bytes}); }
    void end() { ++shard; }
};

std::uint64_t model_bytes(const std::vector<ProfileEntry>& entries)
{
    std::uint64_t total = 0;
    for (const auto& e : entries)
        if (e.kind == ObjectKind::Tensor) total += e.size_bytes;
    return total;
}

void optimizer_shard(ShardBuilder& b, std::uint64_t bytes)
{
    // fp32 master weights, exp_avg, exp_avg_sq
    b.begin();
    const std::uint64_t third = bytes / 3;
    b.tensor(third);
    b.tensor(third);
    b.tensor(bytes - 2 * third);
    b.end();
}

// BLOOM-style decoder, 4-way tensor parallel: embedding file, one file per
// layer, final layernorm file, optimizer file => 33 files per rank.
ModelProfile bloom_3b()
{
    constexpr std::uint64_t vocab = 250880, h = 2560, layers = 30, tp = 4, ranks = 4;
    constexpr std::uint64_t target_total = 42'000'000'000ULL;

    ModelProfile p;
    p.name = "3b";
    p.num_ranks = ranks;
    p.provenance = "built-in";
    p.per_rank_objects.resize(ranks);
    for (std::uint32_t r = 0; r < ranks; ++r) {
        auto& entries = p.per_rank_objects[r];
        ShardBuilder b{entries};
        b.begin();
        b.tensor(vocab * h / tp * kBf16);  // word_embeddings
        b.tensor(h * kBf16);               // word_embeddings_layernorm.weight
        b.tensor(h * kBf16);               // word_embeddings_layernorm.bias
        b.end();
        for (std::uint64_t l = 0; l < layers; ++l) {
            b.begin();
            b.tensor(h * kBf16);                    // input_layernorm.weight
            b.tensor(h * kBf16);                    // input_layernorm.bias
            b.tensor(3 * h * h / tp * kBf16);       // query_key_value.weight
            b.tensor(3 * h / tp * kBf16);           // query_key_value.bias
            b.tensor(h * h / tp * kBf16);           // dense.weight
            b.tensor(h * kBf16);                    // dense.bias
            b.tensor(h * kBf16);                    // post_attention_layernorm.weight
            b.tensor(h * kBf16);                    // post_attention_layernorm.bias
            b.tensor(4 * h * h / tp * kBf16);       // dense_h_to_4h.weight
            b.tensor(4 * h / tp * kBf16);           // dense_h_to_4h.bias
            b.tensor(4 * h * h / tp * kBf16);       // dense_4h_to_h.weight
            b.tensor(h * kBf16);                    // dense_4h_to_h.bias
            b.end();
        }
        b.begin();
        b.tensor(h * kBf16);  // ln_f.weight
        b.tensor(h * kBf16);  // ln_f.bias
        b.end();

        const std::uint64_t used = model_bytes(entries) + (b.shard + 1) * (kHeaderBytes + kLeanBytes);
        optimizer_shard(b, target_total / ranks - used);
    }
    return p;
}

// LLaMA-style decoder (RMSNorm, gated MLP, untied lm_head): embedding file,
// one file per layer, final norm, lm_head, optimizer.
ModelProfile llama(std::string name, std::uint64_t h, std::uint64_t ffn, std::uint64_t layers, std::uint32_t tp)
{
    constexpr std::uint64_t vocab = 32000;
    ModelProfile p;
    p.name = std::move(name);
    p.num_ranks = tp;
    p.provenance = "built-in";
    p.per_rank_objects.resize(tp);
    for (std::uint32_t r = 0; r < tp; ++r) {
        auto& entries = p.per_rank_objects[r];
        ShardBuilder b{entries};
        b.begin();
        b.tensor(vocab * h / tp * kBf16);  // embed_tokens
        b.end();
        for (std::uint64_t l = 0; l < layers; ++l) {
            b.begin();
            b.tensor(h * kBf16);                // input_layernorm
            for (int i = 0; i < 4; ++i)         // q, k, v, o projections
                b.tensor(h * h / tp * kBf16);
            for (int i = 0; i < 3; ++i)         // gate, up, down projections
                b.tensor(ffn * h / tp * kBf16);
            b.tensor(h * kBf16);                // post_attention_layernorm
            b.end();
        }
        b.begin();
        b.tensor(h * kBf16);  // norm
        b.end();
        b.begin();
        b.tensor(vocab * h / tp * kBf16);  // lm_head
        b.end();
        // 12 bytes of optimizer state per 2-byte parameter
        optimizer_shard(b, model_bytes(entries) * 6);
    }
    return p;
}

std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

} // namespace

std::vector<std::string> builtin_profile_names() { return {"3b", "7b", "13b"}; }

ModelProfile builtin_profile(std::string_view name)
{
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "3b") return bloom_3b();
    if (lower == "7b") return llama("7b", 4096, 11008, 32, 8);
    if (lower == "13b") return llama("13b", 5120, 13824, 40, 16);
    throw Error(ErrorCode::InvalidArgument, "unknown built-in profile '" + lower + "'");
}

ModelProfile parse_profile(std::string_view text, std::string name)
{
    std::map<std::uint32_t, std::vector<ProfileEntry>> by_rank;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;

        std::istringstream fields(line);
        long long rank = -1, shard = -1;
        std::string kind;
        long long size = -1;
        std::string extra;
        if (!(fields >> rank >> shard >> kind >> size) || (fields >> extra))
            throw Error(ErrorCode::MalformedProfile,
                        "line " + std::to_string(lineno) + ": expected `rank shard kind size_bytes`");
        if (rank < 0 || shard < 0)
            throw Error(ErrorCode::MalformedProfile, "line " + std::to_string(lineno) + ": negative index");
        if (size <= 0)
            throw Error(ErrorCode::MalformedProfile, "line " + std::to_string(lineno) + ": size must be >= 1");
        ObjectKind k;
        try {
            k = object_kind_from_string(kind);
        } catch (const Error&) {
            throw Error(ErrorCode::MalformedProfile, "line " + std::to_string(lineno) + ": unknown kind '" + kind + "'");
        }
        by_rank[static_cast<std::uint32_t>(rank)].push_back(
            {static_cast<std::uint32_t>(shard), k, static_cast<std::uint64_t>(size)});
    }
    require(!by_rank.empty(), ErrorCode::MalformedProfile, "profile lists no objects");

    ModelProfile p;
    p.name = std::move(name);
    p.provenance = "loaded-from-file";
    p.num_ranks = by_rank.rbegin()->first + 1;
    p.per_rank_objects.resize(p.num_ranks);
    for (std::uint32_t r = 0; r < p.num_ranks; ++r) {
        auto it = by_rank.find(r);
        require(it != by_rank.end(), ErrorCode::MalformedProfile, "rank " + std::to_string(r) + " has no objects");
        p.per_rank_objects[r] = std::move(it->second);
    }
    return p;
}

ModelProfile load_profile(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::PathError, "cannot open profile " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_profile(ss.str(), path.stem().string());
}

std::string format_profile(const ModelProfile& profile)
{
    std::ostringstream out;
    out << "# ckptbench profile: " << profile.name << " (" << profile.provenance << ")\n";
    out << "# rank shard kind size_bytes\n";
    for (std::uint32_t r = 0; r < profile.per_rank_objects.size(); ++r)
        for (const auto& e : profile.per_rank_objects[r])
            out << r << ' ' << e.shard << ' ' << to_string(e.kind) << ' ' << e.size_bytes << '\n';
    return out.str();
}

ModelProfile resolve_profile(std::string_view name_or_path)
{
    for (const auto& n : builtin_profile_names()) {
        std::string lower(name_or_path);
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        if (lower == n) return builtin_profile(n);
    }
    return load_profile(std::filesystem::path(name_or_path));
}

ModelProfile scale_profile(const ModelProfile& profile, double factor)
{
    require(factor > 0.0, ErrorCode::InvalidArgument, "scale factor must be positive");
    ModelProfile out = profile;
    for (auto& rank : out.per_rank_objects)
        for (auto& e : rank)
            e.size_bytes = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(e.size_bytes * factor)));
    if (factor != 1.0) {
        std::ostringstream label;
        label << out.name << '@' << factor;
        out.name = label.str();
    }
    return out;
}

} // namespace ckptbench
