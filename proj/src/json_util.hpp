// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckptbench/error.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace ckptbench::json {

using ordered = nlohmann::ordered_json;

inline ordered parse_or_throw(std::string_view text, ErrorCode code, const std::string& what)
{
    try {
        return ordered::parse(text);
    } catch (const nlohmann::json::parse_error& ex) {
        throw Error(code, what + ": " + ex.what());
    }
}

/// 64-bit values that must survive JavaScript-style number handling are
/// written as "0x" + 16 lowercase hex digits.
inline std::string hex64(std::uint64_t v)
{
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t parse_hex64(const std::string& s)
{
    if (s.size() != 18 || s[0] != '0' || s[1] != 'x') throw Error(ErrorCode::InvalidArgument, "bad hex64 '" + s + "'");
    return std::stoull(s.substr(2), nullptr, 16);
}

} // namespace ckptbench::json
