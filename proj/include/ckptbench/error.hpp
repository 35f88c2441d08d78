// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ckptbench {

enum class ErrorCode {
    InvalidArgument,
    MalformedProfile,
    InvalidAlignment,
    EmptyWorkload,
    DirectUnsupported,
    PathError,
    PermissionDenied,
    IoError,
    AlignmentViolation,
    InvalidHandle,
    ChecksumMismatch,
    MissingFile,
    ShortManifest,
    SchemaMismatch,
    RankFailure,
    RendezvousTimeout,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Throws Error(code, what) when cond is false.
inline void require(bool cond, ErrorCode code, const std::string& what)
{
    if (!cond) throw Error(code, what);
}

} // namespace ckptbench
