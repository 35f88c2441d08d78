// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

#include "ckptbench/error.hpp"

namespace ckptbench {

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::MalformedProfile: return "malformed-profile";
    case ErrorCode::InvalidAlignment: return "invalid-alignment";
    case ErrorCode::EmptyWorkload: return "empty-workload";
    case ErrorCode::DirectUnsupported: return "direct-unsupported";
    case ErrorCode::PathError: return "path-error";
    case ErrorCode::PermissionDenied: return "permission-denied";
    case ErrorCode::IoError: return "io-error";
    case ErrorCode::AlignmentViolation: return "alignment-violation";
    case ErrorCode::InvalidHandle: return "invalid-handle";
    case ErrorCode::ChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::MissingFile: return "missing-file";
    case ErrorCode::ShortManifest: return "short-manifest";
    case ErrorCode::SchemaMismatch: return "schema-mismatch";
    case ErrorCode::RankFailure: return "rank-failure";
    case ErrorCode::RendezvousTimeout: return "rendezvous-timeout";
    }
    return "unknown";
}

} // namespace ckptbench
